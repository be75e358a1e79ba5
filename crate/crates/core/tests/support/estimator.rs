//! Single-sample (M = 1) shared-gradient estimator against the exact
//! expectation over a small categorical architecture distribution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use enas_core::controller::{ControllerConfig, PolicyState};
use enas_core::layers::Mode;
use enas_core::rng::child_rng;
use enas_core::rnn::{DropoutMasks, LmBatch, Phase, RnnConfig, RnnSupernet};
use enas_core::space::{Genome, SpaceSpec};
use enas_core::trainer::Sampler;
use enas_core::{ParamId, Result, Tape, Tensor};

#[derive(Debug)]
pub struct EstimatorReport {
    pub genomes: Vec<(Genome, f64)>,
    pub exact: Vec<f64>,
    pub estimate: Vec<f64>,
    /// Per-coordinate standard deviation of the single-sample gradient.
    pub spread: Vec<f64>,
    /// `(start, len)` of each parameter tensor in the flat vectors.
    pub tensors: Vec<(usize, usize)>,
    pub draws: usize,
}

impl EstimatorReport {
    /// Largest `|estimate - exact| / max(|exact|, floor * max|exact|)`.
    pub fn max_rel_error(&self, floor: f64) -> f64 {
        let scale = self.exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.exact
            .iter()
            .zip(&self.estimate)
            .map(|(e, s)| (s - e).abs() / e.abs().max(floor * scale))
            .fold(0.0, f64::max)
    }

    /// Largest per-coordinate error relative to the largest exact entry of
    /// the same parameter tensor.
    pub fn max_tensor_rel_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for &(start, len) in &self.tensors {
            let exact = &self.exact[start..start + len];
            let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if scale == 0.0 {
                continue;
            }
            for (e, s) in exact.iter().zip(&self.estimate[start..start + len]) {
                worst = worst.max((s - e).abs() / scale);
            }
        }
        worst
    }

    /// Largest `|estimate - exact|` in units of the estimator's standard
    /// error, over coordinates with non-zero spread.
    pub fn max_z(&self) -> f64 {
        let n = (self.draws as f64).sqrt();
        self.exact
            .iter()
            .zip(&self.estimate)
            .zip(&self.spread)
            .filter(|(_, s)| **s > 1e-15)
            .map(|((e, m), s)| (m - e).abs() / (s / n))
            .fold(0.0, f64::max)
    }
}

struct Setup {
    net: RnnSupernet,
    window: LmBatch,
    state: Tensor,
    ids: Vec<ParamId>,
}

impl Setup {
    fn gradient(&self, g: &Genome) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let (loss, _) = self.net.forward_lm(&mut tape, g, &self.window, &self.state, &DropoutMasks::default(), Mode::Batch)?;
        let grads = tape.backward(loss)?;
        let mut flat = Vec::new();
        for id in &self.ids {
            match grads.param(*id) {
                Some(t) => flat.extend_from_slice(t.values()),
                None => flat.extend(std::iter::repeat(0.0).take(self.net.store.get(*id).len())),
            }
        }
        Ok(flat)
    }
}

/// Every rnn N=2 genome reads every cell parameter, so no coordinate is
/// driven by a single architecture.
const NODES: usize = 2;

/// Eight distinct rnn N=2 genomes drawn from a randomly initialized
/// controller, weighted by their renormalized policy probabilities.
pub fn run(draws: usize, seed: u64) -> Result<EstimatorReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = RnnConfig {
        vocab: 6,
        embed: 6,
        hidden: 6,
        nodes: NODES,
        tied: true,
    };
    let mut net = RnnSupernet::new(config, Phase::Search, &mut rng)?;
    for id in net.store.ids().collect::<Vec<_>>() {
        if net.store.is_trainable(id) && !net.store.name(id).contains("bn") {
            net.store.get_mut(id).values_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1));
        }
    }
    let (batch, steps) = (4, 4);
    let window = LmBatch {
        inputs: (0..batch * steps).map(|_| rng.gen_range(0..6)).collect(),
        targets: (0..batch * steps).map(|_| rng.gen_range(0..6)).collect(),
        batch,
        steps,
    };
    let state = Tensor::from_fn(&[batch, 6], |_| rng.gen_range(-0.1..0.1));
    let ids = net.store.ids().filter(|id| net.store.is_trainable(*id)).collect();
    let setup = Setup { net, window, state, ids };

    let spec = SpaceSpec::rnn(NODES)?;
    let controller = ControllerConfig {
        hidden: 16,
        init_range: 0.5,
        ..ControllerConfig::default()
    };
    let policy = PolicyState::new(spec, controller, &mut rng)?;
    let mut genomes: Vec<(Genome, f64)> = Vec::new();
    while genomes.len() < 8 {
        let (g, _) = policy.sample(&mut rng)?;
        if genomes.iter().all(|(h, _)| *h != g) {
            let p = policy.probability(&g)?;
            genomes.push((g, p));
        }
    }
    let total: f64 = genomes.iter().map(|(_, p)| p).sum();
    genomes.iter_mut().for_each(|(_, p)| *p /= total);

    let grads: Vec<Vec<f64>> = genomes.iter().map(|(g, _)| setup.gradient(g)).collect::<Result<_>>()?;
    let mut exact = vec![0.0; grads[0].len()];
    for ((_, p), g) in genomes.iter().zip(&grads) {
        exact.iter_mut().zip(g).for_each(|(e, v)| *e += p * v);
    }
    let mut spread = vec![0.0; exact.len()];
    for ((_, p), g) in genomes.iter().zip(&grads) {
        spread.iter_mut().zip(g).zip(&exact).for_each(|((s, v), e)| *s += p * (v - e) * (v - e));
    }
    spread.iter_mut().for_each(|s| *s = s.sqrt());
    let mut tensors = Vec::new();
    let mut at = 0;
    for id in &setup.ids {
        let len = setup.net.store.get(*id).len();
        tensors.push((at, len));
        at += len;
    }

    let sampler = Sampler::Categorical(genomes.clone());
    let mut draw_rng = child_rng(seed, "estimator/draws");
    let mut estimate = vec![0.0; exact.len()];
    for _ in 0..draws {
        let g = sampler.draw(&mut draw_rng)?;
        for (e, v) in estimate.iter_mut().zip(setup.gradient(&g)?) {
            *e += v;
        }
    }
    estimate.iter_mut().for_each(|e| *e /= draws as f64);
    Ok(EstimatorReport {
        genomes,
        exact,
        estimate,
        spread,
        tensors,
        draws,
    })
}
