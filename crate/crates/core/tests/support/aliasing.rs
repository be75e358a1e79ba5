//! Weight-sharing aliasing: a gradient step through genome A on one
//! genome-specific parameter changes genome B's output iff B reads it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use enas_core::cnn::{MacroConfig, MacroSupernet, MicroConfig, MicroSupernet};
use enas_core::layers::Mode;
use enas_core::rnn::{DropoutMasks, LmBatch, Phase, RnnConfig, RnnSupernet};
use enas_core::space::{sample_uniform, Genome, SpaceKind, SpaceSpec};
use enas_core::{ParamId, ParamStore, Result, Tape, Tensor};

#[derive(Debug, Default)]
pub struct AliasReport {
    pub pairs: usize,
    pub updates: usize,
    pub shared_updates: usize,
    pub mismatches: Vec<String>,
}

trait Net {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    fn specific(&self, g: &Genome) -> Result<Vec<ParamId>>;
    /// Scalar loss recorded on `tape`.
    fn loss(&self, tape: &mut Tape, g: &Genome) -> Result<enas_core::Var>;
    fn output(&self, g: &Genome) -> Result<Tensor> {
        let mut tape = Tape::new();
        let l = self.loss(&mut tape, g)?;
        Ok(tape.value(l).clone())
    }
}

struct Rnn {
    net: RnnSupernet,
    window: LmBatch,
    state: Tensor,
}

impl Net for Rnn {
    fn store(&self) -> &ParamStore {
        &self.net.store
    }
    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.net.store
    }
    fn specific(&self, g: &Genome) -> Result<Vec<ParamId>> {
        Ok(self.net.cell_params(g.as_rnn().expect("rnn genome"))[4..].to_vec())
    }
    fn loss(&self, tape: &mut Tape, g: &Genome) -> Result<enas_core::Var> {
        Ok(self.net.forward_lm(tape, g, &self.window, &self.state, &DropoutMasks::default(), Mode::Batch)?.0)
    }
}

struct Image<N> {
    net: N,
    images: Tensor,
    labels: Vec<usize>,
}

macro_rules! image_net {
    ($t:ty) => {
        impl Net for Image<$t> {
            fn store(&self) -> &ParamStore {
                &self.net.store
            }
            fn store_mut(&mut self) -> &mut ParamStore {
                &mut self.net.store
            }
            fn specific(&self, g: &Genome) -> Result<Vec<ParamId>> {
                self.net.op_params(g)
            }
            fn loss(&self, tape: &mut Tape, g: &Genome) -> Result<enas_core::Var> {
                let x = tape.constant(self.images.clone())?;
                let logits = self.net.forward(tape, g, x, Mode::Batch)?;
                tape.softmax_cross_entropy(logits, &self.labels)
            }
            fn output(&self, g: &Genome) -> Result<Tensor> {
                self.net.logits(g, &self.images, Mode::Batch)
            }
        }
    };
}
image_net!(MacroSupernet);
image_net!(MicroSupernet);

fn check_pair(net: &mut dyn Net, a: &Genome, b: &Genome, report: &mut AliasReport) -> Result<()> {
    let mut tape = Tape::new();
    let loss = net.loss(&mut tape, a)?;
    let grads = tape.backward(loss)?;
    let before = net.output(b)?;
    let b_reads = net.specific(b)?;
    let mut seen = Vec::new();
    for id in net.specific(a)? {
        if seen.contains(&id) {
            continue;
        }
        seen.push(id);
        let Some(g) = grads.param(id) else {
            report.mismatches.push(format!("{} read by A has no gradient", net.store().name(id)));
            continue;
        };
        if g.values().iter().all(|v| *v == 0.0) {
            continue;
        }
        let saved = net.store().get(id).clone();
        for (w, d) in net.store_mut().get_mut(id).values_mut().iter_mut().zip(g.values()) {
            *w -= 0.5 * d;
        }
        let changed = net.output(b)? != before;
        *net.store_mut().get_mut(id) = saved;
        let shared = b_reads.contains(&id);
        report.updates += 1;
        report.shared_updates += usize::from(shared);
        if changed != shared {
            report.mismatches.push(format!(
                "{}: shared={shared} changed={changed} A={} B={}",
                net.store().name(id),
                a.id(),
                b.id()
            ));
        }
    }
    report.pairs += 1;
    Ok(())
}

/// Pairs: each genome against itself, a one-decision neighbour, and an
/// independent uniform draw.
fn run(net: &mut dyn Net, spec: &SpaceSpec, pairs: usize, rng: &mut ChaCha8Rng) -> Result<AliasReport> {
    let mut report = AliasReport::default();
    let layout = spec.decisions();
    for i in 0..pairs {
        let a = sample_uniform(spec, rng);
        let b = match i % 3 {
            0 => a.clone(),
            1 => {
                let mut d = a.to_decisions();
                let k = rng.gen_range(0..d.len());
                d[k] = (d[k] + rng.gen_range(1..layout[k].choices.max(2))) % layout[k].choices;
                Genome::from_decisions(spec, &d)?
            }
            _ => sample_uniform(spec, rng),
        };
        check_pair(net, &a, &b, &mut report)?;
    }
    Ok(report)
}

pub fn check_space(kind: SpaceKind, pairs: usize, seed: u64) -> Result<AliasReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        SpaceKind::Rnn => {
            let config = RnnConfig {
                vocab: 6,
                embed: 4,
                hidden: 4,
                nodes: 5,
                tied: false,
            };
            let mut net = RnnSupernet::new(config, Phase::Search, &mut rng)?;
            for id in net.store.ids().collect::<Vec<_>>() {
                if net.store.is_trainable(id) && !net.store.name(id).contains("bn") {
                    net.store.get_mut(id).values_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
                }
            }
            let (batch, steps) = (3, 4);
            let window = LmBatch {
                inputs: (0..batch * steps).map(|_| rng.gen_range(0..6)).collect(),
                targets: (0..batch * steps).map(|_| rng.gen_range(0..6)).collect(),
                batch,
                steps,
            };
            let state = Tensor::from_fn(&[batch, 4], |_| rng.gen_range(-1.0..1.0));
            let spec = net.spec();
            run(&mut Rnn { net, window, state }, &spec, pairs, &mut rng)
        }
        SpaceKind::Macro => {
            let config = MacroConfig {
                layers: 4,
                channels: 3,
                classes: 3,
                in_channels: 2,
                projection_bn: false,
            };
            let net = MacroSupernet::new(config, &mut rng)?;
            let images = Tensor::from_fn(&[3, 5, 5, 2], |_| rng.gen_range(-1.0..1.0));
            let spec = net.spec();
            run(&mut Image { net, images, labels: vec![0, 1, 2] }, &spec, pairs, &mut rng)
        }
        SpaceKind::Micro => {
            let config = MicroConfig {
                nodes: 4,
                channels: 3,
                classes: 3,
                in_channels: 2,
                repeats: 1,
                projection_bn: false,
            };
            let net = MicroSupernet::new(config, &mut rng)?;
            let images = Tensor::from_fn(&[3, 8, 8, 2], |_| rng.gen_range(-1.0..1.0));
            let spec = net.spec();
            run(&mut Image { net, images, labels: vec![0, 1, 2] }, &spec, pairs, &mut rng)
        }
    }
}
