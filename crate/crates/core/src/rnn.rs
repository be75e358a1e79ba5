//! Shared-parameter recurrent cell and its language-model wrapper.
//!
//! Node 1 mixes the input with the previous hidden state; node `l >= 2`
//! reads one earlier node. Every node is a highway unit
//! `h = c * f(h_in W_h) + (1 - c) * h_in` with a sigmoid gate `c`. The cell
//! output is the mean of the loose ends. No biases.

use rand::Rng;

use crate::error::{Error, Result};
use crate::space::{Activation, Genome, RnnGenome, SpaceSpec};
use crate::layers::{BatchNorm, Mode};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RnnConfig {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub nodes: usize,
    pub tied: bool,
}

/// Whether the bank is a search supernet or a fixed architecture being
/// retrained from scratch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Search,
    Retrain,
}

impl Phase {
    pub fn init_range(self) -> f64 {
        match self {
            Phase::Search => 0.025,
            Phase::Retrain => 0.04,
        }
    }
}

/// One parameter bank serving every genome of an rnn space.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnSupernet {
    pub config: RnnConfig,
    pub store: ParamStore,
    w_xc: ParamId,
    w_xh: ParamId,
    w_c0: ParamId,
    w_h1: ParamId,
    /// `edges[l][j - 1] = (W_c, W_h)` for `1 <= j < l`.
    edges: Vec<Vec<(ParamId, ParamId)>>,
    embedding: ParamId,
    softmax: Option<ParamId>,
    bn: Option<BatchNorm>,
}

/// Everything a single cell application produced.
pub struct CellOutput {
    pub output: Var,
    pub nodes: Vec<Var>,
    pub gates: Vec<Var>,
}

/// Variational dropout masks, fixed over a whole window. Entries are
/// already scaled by `1 / keep`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DropoutMasks {
    pub input: Option<Tensor>,
    pub hidden: Option<Tensor>,
    pub output: Option<Tensor>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutRates {
    pub input: f64,
    pub hidden: f64,
    pub output: f64,
}

impl Default for DropoutRates {
    fn default() -> Self {
        DropoutRates {
            input: 0.1,
            hidden: 0.1,
            output: 0.1,
        }
    }
}

fn mask<R: Rng + ?Sized>(rate: f64, shape: &[usize], rng: &mut R) -> Option<Tensor> {
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    Some(Tensor::from_fn(shape, |_| if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 }))
}

impl DropoutMasks {
    pub fn sample<R: Rng + ?Sized>(rates: DropoutRates, batch: usize, config: &RnnConfig, rng: &mut R) -> Self {
        DropoutMasks {
            input: mask(rates.input, &[batch, config.embed], rng),
            hidden: mask(rates.hidden, &[batch, config.hidden], rng),
            output: mask(rates.output, &[batch, config.hidden], rng),
        }
    }
}

/// A window of token ids, time-major: `inputs[t * batch + b]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LmBatch {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub batch: usize,
    pub steps: usize,
}

pub fn perplexity(loss: f64) -> f64 {
    loss.exp()
}

fn uniform<R: Rng + ?Sized>(shape: &[usize], r: f64, rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-r..=r))
}

impl RnnSupernet {
    pub fn new<R: Rng + ?Sized>(config: RnnConfig, phase: Phase, rng: &mut R) -> Result<Self> {
        if config.nodes == 0 || config.hidden == 0 || config.embed == 0 || config.vocab == 0 {
            return Err(Error::InvalidArgument(format!("degenerate rnn config {config:?}")));
        }
        if config.tied && config.embed != config.hidden {
            return Err(Error::InvalidArgument(
                "tied embeddings need embed size equal to hidden size".into(),
            ));
        }
        let (e, h, r) = (config.embed, config.hidden, phase.init_range());
        let mut store = ParamStore::new();
        let w_xc = store.add("rnn/w_xc", uniform(&[e, h], r, rng));
        let w_xh = store.add("rnn/w_xh", uniform(&[e, h], r, rng));
        let w_c0 = store.add("rnn/w_c0", uniform(&[h, h], r, rng));
        let w_h1 = store.add("rnn/w_h1", uniform(&[h, h], r, rng));
        let mut edges = vec![Vec::new(), Vec::new()];
        for l in 2..=config.nodes {
            let mut row = Vec::new();
            for j in 1..l {
                let c = store.add(format!("rnn/w_c[{l},{j}]"), uniform(&[h, h], r, rng));
                let hh = store.add(format!("rnn/w_h[{l},{j}]"), uniform(&[h, h], r, rng));
                row.push((c, hh));
            }
            edges.push(row);
        }
        let embedding = store.add("rnn/embedding", uniform(&[config.vocab, e], r, rng));
        let softmax = if config.tied {
            None
        } else {
            Some(store.add("rnn/softmax", uniform(&[h, config.vocab], r, rng)))
        };
        let bn = match phase {
            Phase::Search => Some(BatchNorm::new(&mut store, "rnn/bn", h)),
            Phase::Retrain => None,
        };
        Ok(RnnSupernet {
            config,
            store,
            w_xc,
            w_xh,
            w_c0,
            w_h1,
            edges,
            embedding,
            softmax,
            bn,
        })
    }

    pub fn spec(&self) -> SpaceSpec {
        SpaceSpec::rnn(self.config.nodes).expect("validated at construction")
    }

    pub fn has_batch_norm(&self) -> bool {
        self.bn.is_some()
    }

    /// `(W_c, W_h)` of edge `j -> l`.
    pub fn edge(&self, l: usize, j: usize) -> (ParamId, ParamId) {
        self.edges[l][j - 1]
    }

    /// Parameters read by `genome` (excluding embeddings and batch norm).
    pub fn cell_params(&self, genome: &RnnGenome) -> Vec<ParamId> {
        let mut ids = vec![self.w_xc, self.w_xh, self.w_c0, self.w_h1];
        for l in 2..=genome.nodes() {
            let (c, h) = self.edge(l, genome.prev[l - 2]);
            ids.push(c);
            ids.push(h);
        }
        ids
    }

    pub fn embedding_id(&self) -> ParamId {
        self.embedding
    }

    fn check<'g>(&self, genome: &'g Genome) -> Result<&'g RnnGenome> {
        genome.validate(&self.spec())?;
        Ok(genome.as_rnn().expect("validated as rnn"))
    }

    fn activate(tape: &mut Tape, f: Activation, x: Var) -> Result<Var> {
        match f {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
            Activation::Identity => tape.identity(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }

    fn highway(tape: &mut Tape, gate_pre: Var, cand_pre: Var, f: Activation, carry: Var) -> Result<(Var, Var)> {
        let c = tape.sigmoid(gate_pre)?;
        let cand = Self::activate(tape, f, cand_pre)?;
        let a = tape.mul(c, cand)?;
        let keep = tape.one_minus(c)?;
        let b = tape.mul(keep, carry)?;
        Ok((tape.add(a, b)?, c))
    }

    /// One cell step. `x` is `[batch, embed]`, `h_prev` is `[batch, hidden]`.
    pub fn forward_cell(&self, tape: &mut Tape, genome: &Genome, x: Var, h_prev: Var, mode: Mode) -> Result<CellOutput> {
        let g = self.check(genome)?;
        let p = |tape: &mut Tape, id| tape.param(&self.store, id);
        let (wxc, wxh, wc0, wh1) = (p(tape, self.w_xc)?, p(tape, self.w_xh)?, p(tape, self.w_c0)?, p(tape, self.w_h1)?);
        let xc = tape.matmul(x, wxc)?;
        let hc = tape.matmul(h_prev, wc0)?;
        let gate_pre = tape.add(xc, hc)?;
        let xh = tape.matmul(x, wxh)?;
        let hh = tape.matmul(h_prev, wh1)?;
        let cand_pre = tape.add(xh, hh)?;
        let (h1, c1) = Self::highway(tape, gate_pre, cand_pre, g.activations[0], h_prev)?;
        let mut nodes = vec![h1];
        let mut gates = vec![c1];
        for l in 2..=g.nodes() {
            let j = g.prev[l - 2];
            let (wc, wh) = self.edge(l, j);
            let (wc, wh) = (p(tape, wc)?, p(tape, wh)?);
            let input = nodes[j - 1];
            let gate_pre = tape.matmul(input, wc)?;
            let cand_pre = tape.matmul(input, wh)?;
            let (hl, cl) = Self::highway(tape, gate_pre, cand_pre, g.activations[l - 1], input)?;
            nodes.push(hl);
            gates.push(cl);
        }
        let ends: Vec<Var> = g.loose_ends().iter().map(|i| nodes[i - 1]).collect();
        let mut output = tape.mean_of(&ends)?;
        if let Some(bn) = &self.bn {
            output = bn.forward(tape, &self.store, output, mode)?;
        }
        Ok(CellOutput { output, nodes, gates })
    }

    /// Unrolls the cell over `batch` and returns the mean token
    /// cross-entropy plus the final hidden state.
    pub fn forward_lm(
        &self,
        tape: &mut Tape,
        genome: &Genome,
        batch: &LmBatch,
        state: &Tensor,
        masks: &DropoutMasks,
        mode: Mode,
    ) -> Result<(Var, Tensor)> {
        if batch.steps == 0 || batch.batch == 0 {
            return Err(Error::Empty("language-model window has no tokens".into()));
        }
        let n = batch.steps * batch.batch;
        if batch.inputs.len() != n || batch.targets.len() != n {
            return Err(Error::Shape {
                op: "forward_lm",
                lhs: vec![batch.steps, batch.batch],
                rhs: vec![batch.inputs.len()],
            });
        }
        if state.shape() != [batch.batch, self.config.hidden] {
            return Err(Error::Shape {
                op: "forward_lm",
                lhs: state.shape().to_vec(),
                rhs: vec![batch.batch, self.config.hidden],
            });
        }
        if let Some(bad) = batch.inputs.iter().chain(&batch.targets).find(|t| **t >= self.config.vocab) {
            return Err(Error::InvalidArgument(format!(
                "token {bad} outside vocabulary of {}",
                self.config.vocab
            )));
        }
        let emb = tape.param(&self.store, self.embedding)?;
        let mut h = tape.constant(state.clone())?;
        let mut outs = Vec::with_capacity(batch.steps);
        for t in 0..batch.steps {
            let ids = &batch.inputs[t * batch.batch..(t + 1) * batch.batch];
            let mut x = tape.embedding(emb, ids)?;
            if let Some(m) = &masks.input {
                x = tape.dropout(x, m)?;
            }
            let mut hp = h;
            if let Some(m) = &masks.hidden {
                hp = tape.dropout(hp, m)?;
            }
            h = self.forward_cell(tape, genome, x, hp, mode)?.output;
            let mut o = h;
            if let Some(m) = &masks.output {
                o = tape.dropout(o, m)?;
            }
            outs.push(o);
        }
        let all = tape.concat(&outs, 0)?;
        let w = match self.softmax {
            Some(id) => tape.param(&self.store, id)?,
            None => tape.transpose(emb)?,
        };
        let logits = tape.matmul(all, w)?;
        let loss = tape.softmax_cross_entropy(logits, &batch.targets)?;
        Ok((loss, tape.value(h).clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_bank(nodes: usize, hidden: usize) -> RnnSupernet {
        let cfg = RnnConfig {
            vocab: 3,
            embed: hidden,
            hidden,
            nodes,
            tied: true,
        };
        let mut net = RnnSupernet::new(cfg, Phase::Retrain, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for id in net.store.ids().collect::<Vec<_>>() {
            net.store.get_mut(id).values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        net
    }

    #[test]
    fn zero_weights_half_carry() {
        let net = zero_bank(1, 2);
        let g = Genome::Rnn(RnnGenome {
            activations: vec![Activation::Tanh],
            prev: vec![],
        });
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2])).unwrap();
        let h = tape.constant(Tensor::full(&[1, 2], 1.0)).unwrap();
        let out = net.forward_cell(&mut tape, &g, x, h, Mode::Eval).unwrap();
        assert_eq!(tape.value(out.output).values(), &[0.5, 0.5]);
    }

    #[test]
    fn identity_edge_reproduces_input_node() {
        let mut net = zero_bank(2, 2);
        let (_, wh) = net.edge(2, 1);
        net.store.get_mut(wh).values_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let g = Genome::Rnn(RnnGenome {
            activations: vec![Activation::Tanh, Activation::Identity],
            prev: vec![1],
        });
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2])).unwrap();
        let h = tape.constant(Tensor::new(vec![1, 2], vec![0.3, -0.8]).unwrap()).unwrap();
        let out = net.forward_cell(&mut tape, &g, x, h, Mode::Eval).unwrap();
        assert_eq!(tape.value(out.nodes[1]).values(), tape.value(out.nodes[0]).values());
    }

    #[test]
    fn window_validation() {
        let net = zero_bank(1, 2);
        let g = Genome::Rnn(RnnGenome {
            activations: vec![Activation::Tanh],
            prev: vec![],
        });
        let mut tape = Tape::new();
        let empty = LmBatch {
            inputs: vec![],
            targets: vec![],
            batch: 1,
            steps: 0,
        };
        let st = Tensor::zeros(&[1, 2]);
        assert!(net.forward_lm(&mut tape, &g, &empty, &st, &DropoutMasks::default(), Mode::Eval).is_err());
        let oov = LmBatch {
            inputs: vec![7],
            targets: vec![0],
            batch: 1,
            steps: 1,
        };
        assert!(net.forward_lm(&mut tape, &g, &oov, &st, &DropoutMasks::default(), Mode::Eval).is_err());
    }

    #[test]
    fn perplexity_values() {
        assert_eq!(perplexity(0.0), 1.0);
        assert!((perplexity(100f64.ln()) - 100.0).abs() < 1e-9);
        assert!((perplexity(4.0) - 54.598).abs() < 1e-3);
    }
}
