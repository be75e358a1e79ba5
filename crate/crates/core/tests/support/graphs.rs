//! Random op-composition graphs for gradient checking.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use enas_core::layers::Mode;
use enas_core::rnn::{DropoutMasks, LmBatch, Phase, RnnConfig, RnnSupernet};
use enas_core::space::sample_uniform;
use enas_core::space::SpaceSpec;
use enas_core::tensor::{grad_check, grad_check_params, BnMode, GradCheckReport};
use enas_core::{Result, Tape, Tensor, Var};

pub const STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
enum Step {
    Tanh,
    Sigmoid,
    Relu,
    Exp,
    Square,
    Mul(usize),
    Add(usize),
    Sub(usize),
    MatMul(usize),
    Bias(usize),
    BatchNorm(usize, usize),
    LogSoftmax,
    MeanWithTanh,
    ConcatNarrow,
    TransposeTwice,
    Dropout(Tensor),
    Conv(usize, usize),
    Depthwise(usize, usize),
    Separable(usize, usize, usize),
    MaxPool(usize),
    AvgPool(usize),
}

#[derive(Clone, Debug)]
enum Head {
    Xent(usize, Vec<usize>),
    Weighted(Tensor),
    PoolXent(usize, Vec<usize>),
}

/// A random program over free input tensors; input 0 is the data.
#[derive(Clone, Debug)]
pub struct Program {
    pub inputs: Vec<Tensor>,
    steps: Vec<Step>,
    head: Head,
    pub family: &'static str,
}

fn uniform(shape: &[usize], r: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-r..r))
}

fn push(inputs: &mut Vec<Tensor>, t: Tensor) -> usize {
    inputs.push(t);
    inputs.len() - 1
}

fn dense_program(rng: &mut ChaCha8Rng) -> Program {
    let rows = 4;
    let mut width = rng.gen_range(2..=4);
    let mut inputs = vec![uniform(&[rows, width], 1.0, rng)];
    let mut steps = Vec::new();
    for _ in 0..rng.gen_range(3..=8) {
        let step = match rng.gen_range(0..15) {
            0 => Step::Tanh,
            1 => Step::Sigmoid,
            2 => Step::Relu,
            3 => Step::Exp,
            4 => Step::Square,
            5 => Step::Mul(push(&mut inputs, uniform(&[rows, width], 1.0, rng))),
            6 => Step::Add(push(&mut inputs, uniform(&[rows, width], 1.0, rng))),
            7 => Step::Sub(push(&mut inputs, uniform(&[rows, width], 1.0, rng))),
            8 => {
                let next = rng.gen_range(2..=4);
                let w = uniform(&[width, next], 1.0 / (width as f64).sqrt(), rng);
                width = next;
                Step::MatMul(push(&mut inputs, w))
            }
            9 => Step::Bias(push(&mut inputs, uniform(&[width], 0.5, rng))),
            10 => {
                let g = push(&mut inputs, Tensor::from_fn(&[width], |_| rng.gen_range(0.5..1.5)));
                let b = push(&mut inputs, uniform(&[width], 0.5, rng));
                Step::BatchNorm(g, b)
            }
            11 => Step::LogSoftmax,
            12 => Step::MeanWithTanh,
            13 => [Step::ConcatNarrow, Step::TransposeTwice].choose(rng).unwrap().clone(),
            _ => Step::Dropout(Tensor::from_fn(&[rows, width], |_| if rng.gen_bool(0.7) { 1.0 / 0.7 } else { 0.0 })),
        };
        steps.push(step);
    }
    let head = if rng.gen_bool(0.5) {
        let classes = 3;
        let w = push(&mut inputs, uniform(&[width, classes], 1.0, rng));
        Head::Xent(w, (0..rows).map(|_| rng.gen_range(0..classes)).collect())
    } else {
        Head::Weighted(uniform(&[rows, width], 1.0, rng))
    };
    Program {
        inputs,
        steps,
        head,
        family: "dense",
    }
}

fn conv_program(rng: &mut ChaCha8Rng) -> Program {
    let (n, side) = (2, rng.gen_range(3..=5));
    let mut c = rng.gen_range(1..=3);
    let mut inputs = vec![uniform(&[n, side, side, c], 1.0, rng)];
    let mut steps = Vec::new();
    for _ in 0..rng.gen_range(2..=5) {
        let stride = if rng.gen_bool(0.25) { 2 } else { 1 };
        let step = match rng.gen_range(0..8) {
            0 | 1 => {
                let k = *[1, 3, 5].choose(rng).unwrap();
                let cout = rng.gen_range(1..=3);
                let w = uniform(&[k, k, c, cout], 1.0 / ((k * k * c) as f64).sqrt(), rng);
                c = cout;
                Step::Conv(push(&mut inputs, w), stride)
            }
            2 => {
                let k = *[3, 5].choose(rng).unwrap();
                Step::Depthwise(push(&mut inputs, uniform(&[k, k, c], 1.0 / k as f64, rng)), stride)
            }
            3 => {
                let cout = rng.gen_range(1..=3);
                let dw = push(&mut inputs, uniform(&[3, 3, c], 1.0 / 3.0, rng));
                let pw = push(&mut inputs, uniform(&[1, 1, c, cout], 1.0 / (c as f64).sqrt(), rng));
                c = cout;
                Step::Separable(dw, pw, stride)
            }
            4 => Step::MaxPool(stride),
            5 => Step::AvgPool(stride),
            6 => {
                let g = push(&mut inputs, Tensor::from_fn(&[c], |_| rng.gen_range(0.5..1.5)));
                let b = push(&mut inputs, uniform(&[c], 0.5, rng));
                Step::BatchNorm(g, b)
            }
            _ => [Step::Relu, Step::Tanh].choose(rng).unwrap().clone(),
        };
        steps.push(step);
    }
    let classes = 3;
    let w = push(&mut inputs, uniform(&[c, classes], 1.0, rng));
    Program {
        inputs,
        steps,
        head: Head::PoolXent(w, (0..n).map(|_| rng.gen_range(0..classes)).collect()),
        family: "conv",
    }
}

impl Program {
    pub fn random(seed: u64) -> Program {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if rng.gen_bool(0.5) {
            dense_program(&mut rng)
        } else {
            conv_program(&mut rng)
        }
    }

    pub fn run(&self, tape: &mut Tape, vars: &[Var]) -> Result<Var> {
        let mut x = vars[0];
        for step in &self.steps {
            x = match step {
                Step::Tanh => tape.tanh(x)?,
                Step::Sigmoid => tape.sigmoid(x)?,
                Step::Relu => tape.relu(x)?,
                Step::Exp => {
                    let s = tape.tanh(x)?;
                    tape.exp(s)?
                }
                Step::Square => tape.mul(x, x)?,
                Step::Mul(i) => tape.mul(x, vars[*i])?,
                Step::Add(i) => tape.add(x, vars[*i])?,
                Step::Sub(i) => tape.sub(x, vars[*i])?,
                Step::MatMul(i) => tape.matmul(x, vars[*i])?,
                Step::Bias(i) => tape.add_bias(x, vars[*i])?,
                Step::BatchNorm(g, b) => tape.batch_norm(x, vars[*g], vars[*b], BnMode::Batch { record: None })?,
                Step::LogSoftmax => tape.log_softmax(x)?,
                Step::MeanWithTanh => {
                    let t = tape.tanh(x)?;
                    tape.mean_of(&[x, t])?
                }
                Step::ConcatNarrow => {
                    let width = tape.shape(x)[1];
                    let s = tape.sigmoid(x)?;
                    let both = tape.concat(&[s, x], 1)?;
                    tape.narrow(both, 1, width / 2, width)?
                }
                Step::TransposeTwice => {
                    let t = tape.transpose(x)?;
                    let t = tape.scale(t, 0.7)?;
                    tape.transpose(t)?
                }
                Step::Dropout(mask) => tape.dropout(x, mask)?,
                Step::Conv(w, s) => tape.conv2d(x, vars[*w], *s)?,
                Step::Depthwise(w, s) => tape.depthwise_conv2d(x, vars[*w], *s)?,
                Step::Separable(dw, pw, s) => tape.separable_conv2d(x, vars[*dw], vars[*pw], *s)?,
                Step::MaxPool(s) => tape.max_pool(x, 3, *s)?,
                Step::AvgPool(s) => tape.avg_pool(x, 3, *s)?,
            };
        }
        match &self.head {
            Head::Xent(w, labels) => {
                let logits = tape.matmul(x, vars[*w])?;
                tape.softmax_cross_entropy(logits, labels)
            }
            Head::Weighted(c) => {
                let c = tape.constant(c.clone())?;
                let y = tape.mul(x, c)?;
                tape.sum(y)
            }
            Head::PoolXent(w, labels) => {
                let p = tape.global_avg_pool(x)?;
                let logits = tape.matmul(p, vars[*w])?;
                tape.softmax_cross_entropy(logits, labels)
            }
        }
    }

    pub fn uses_batch_norm(&self) -> bool {
        self.steps.iter().any(|s| matches!(s, Step::BatchNorm(..)))
    }

    pub fn uses_conv(&self) -> bool {
        self.steps.iter().any(|s| matches!(s, Step::Conv(..) | Step::Depthwise(..) | Step::Separable(..)))
    }
}

pub fn check_program(seed: u64) -> Result<(GradCheckReport, Program)> {
    let p = Program::random(seed);
    let report = grad_check(|t, v| p.run(t, v), &p.inputs, STEP)?;
    Ok((report, p))
}

/// Full language-model window through the shared recurrent cell at hidden
/// size 4, checked against every trainable parameter.
pub fn check_rnn_cell(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = rng.gen_range(1..=5);
    let config = RnnConfig {
        vocab: 5,
        embed: 4,
        hidden: 4,
        nodes,
        tied: rng.gen_bool(0.5),
    };
    let phase = if rng.gen_bool(0.5) { Phase::Search } else { Phase::Retrain };
    let mut net = RnnSupernet::new(config, phase, &mut rng)?;
    // Larger weights than the search init so every term contributes.
    for id in net.store.ids().collect::<Vec<_>>() {
        if net.store.is_trainable(id) && !net.store.name(id).contains("bn") {
            net.store.get_mut(id).values_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.8..0.8));
        }
    }
    let genome = sample_uniform(&SpaceSpec::rnn(nodes)?, &mut rng);
    let (batch, steps) = (2, 3);
    let window = LmBatch {
        inputs: (0..batch * steps).map(|_| rng.gen_range(0..5)).collect(),
        targets: (0..batch * steps).map(|_| rng.gen_range(0..5)).collect(),
        batch,
        steps,
    };
    let state = uniform(&[batch, 4], 1.0, &mut rng);
    let masks = DropoutMasks::default();
    let ids: Vec<_> = net.store.ids().filter(|id| net.store.is_trainable(*id)).collect();
    grad_check_params(
        |tape, store| {
            let mut n = net.clone();
            n.store = store.clone();
            Ok(n.forward_lm(tape, &genome, &window, &state, &masks, Mode::Batch)?.0)
        },
        &net.store,
        &ids,
        STEP,
    )
}
