//! Small building blocks shared by the supernets.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tensor::{BnMode, ParamId, ParamStore, Tape, Tensor, Var};

/// How batch normalization behaves during a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are queued for update.
    Train,
    /// Batch statistics, nothing recorded. Used for shared-weight scoring
    /// where the sampled architecture's running statistics do not exist.
    Batch,
    /// Stored running statistics.
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: store.add(format!("{name}/gamma"), Tensor::full(&[channels], 1.0)),
            beta: store.add(format!("{name}/beta"), Tensor::zeros(&[channels])),
            mean: store.add_buffer(format!("{name}/mean"), Tensor::zeros(&[channels])),
            var: store.add_buffer(format!("{name}/var"), Tensor::full(&[channels], 1.0)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let gamma = tape.param(store, self.gamma)?;
        let beta = tape.param(store, self.beta)?;
        let bn_mode = match mode {
            Mode::Train => BnMode::Batch {
                record: Some((self.mean, self.var)),
            },
            Mode::Batch => BnMode::Batch { record: None },
            Mode::Eval => BnMode::Running {
                mean: store.get(self.mean).values(),
                var: store.get(self.var).values(),
            },
        };
        tape.batch_norm(x, gamma, beta, bn_mode)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.gamma, self.beta]
    }
}

/// He-normal initialized `[k, k, cin, cout]` kernel.
pub fn he_kernel<R: Rng + ?Sized>(k: usize, cin: usize, cout: usize, rng: &mut R) -> Tensor {
    let std = (2.0 / (k * k * cin) as f64).sqrt();
    let n = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(&[k, k, cin, cout], |_| n.sample(rng))
}

/// He-normal initialized `[k, k, c]` depthwise kernel.
pub fn he_depthwise<R: Rng + ?Sized>(k: usize, c: usize, rng: &mut R) -> Tensor {
    let std = (2.0 / (k * k) as f64).sqrt();
    let n = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(&[k, k, c], |_| n.sample(rng))
}

/// relu -> conv -> batch norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvBn {
    pub kernel: ParamId,
    pub bn: BatchNorm,
}

impl ConvBn {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, k: usize, cin: usize, cout: usize, rng: &mut R) -> Self {
        ConvBn {
            kernel: store.add(format!("{name}/w"), he_kernel(k, cin, cout, rng)),
            bn: BatchNorm::new(store, &format!("{name}/bn"), cout),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, stride: usize, mode: Mode) -> Result<Var> {
        let r = tape.relu(x)?;
        let w = tape.param(store, self.kernel)?;
        let y = tape.conv2d(r, w, stride)?;
        self.bn.forward(tape, store, y, mode)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.kernel, self.bn.gamma, self.bn.beta]
    }
}

/// relu -> depthwise -> pointwise -> batch norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SepConvBn {
    pub depthwise: ParamId,
    pub pointwise: ParamId,
    pub bn: BatchNorm,
}

impl SepConvBn {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, k: usize, c: usize, rng: &mut R) -> Self {
        SepConvBn {
            depthwise: store.add(format!("{name}/dw"), he_depthwise(k, c, rng)),
            pointwise: store.add(format!("{name}/pw"), he_kernel(1, c, c, rng)),
            bn: BatchNorm::new(store, &format!("{name}/bn"), c),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, stride: usize, mode: Mode) -> Result<Var> {
        let r = tape.relu(x)?;
        let dw = tape.param(store, self.depthwise)?;
        let pw = tape.param(store, self.pointwise)?;
        let y = tape.separable_conv2d(r, dw, pw, stride)?;
        self.bn.forward(tape, store, y, mode)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.depthwise, self.pointwise, self.bn.gamma, self.bn.beta]
    }
}

/// Dense classifier `x W + b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        let n = Normal::new(0.0, std).expect("finite std");
        Dense {
            weight: store.add(format!("{name}/w"), Tensor::from_fn(&[fan_in, fan_out], |_| n.sample(rng))),
            bias: store.add(format!("{name}/b"), Tensor::zeros(&[fan_out])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight)?;
        let b = tape.param(store, self.bias)?;
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = logits
        .rows()
        .zip(labels)
        .filter(|(row, l)| argmax(row) == **l)
        .count();
    hits as f64 / labels.len() as f64
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        let l = Tensor::new(vec![8, 2], vec![1., 0., 1., 0., 1., 0., 1., 0., 1., 0., 0., 1., 0., 1., 0., 1.]).unwrap();
        // predictions: 0 0 0 0 0 1 1 1
        assert_eq!(accuracy(&l, &[0, 0, 0, 0, 0, 0, 0, 0]), 0.625);
        assert_eq!(accuracy(&l, &[0, 0, 0, 0, 0, 1, 1, 1]), 1.0);
        let flat = Tensor::zeros(&[4, 3]);
        assert_eq!(accuracy(&flat, &[0, 1, 0, 2]), 0.5);
    }
}
