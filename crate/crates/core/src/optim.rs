//! First-order optimizers over a [`ParamStore`].

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    /// Nesterov momentum in the accumulate-then-lookahead form:
    /// `a = m*a + g; p -= lr * (g + m*a)`.
    Nesterov { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter auxiliary buffers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Slot {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    /// Global L2-norm threshold applied to the full gradient set.
    pub clip: Option<f64>,
    /// Coefficient of the additive `wd * param` gradient term.
    pub weight_decay: f64,
    pub slots: BTreeMap<ParamId, Slot>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// Global norm before clipping.
    pub grad_norm: f64,
    pub scale: f64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, clip: Option<f64>, weight_decay: f64) -> Result<Self> {
        if let Some(c) = clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidArgument(format!("clip threshold must be positive, got {c}")));
            }
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::InvalidArgument(format!("weight decay must be non-negative, got {weight_decay}")));
        }
        match kind {
            OptimizerKind::Nesterov { momentum } if !(0.0..1.0).contains(&momentum) => {
                return Err(Error::InvalidArgument(format!("momentum {momentum} outside [0, 1)")));
            }
            OptimizerKind::Adam { beta1, beta2, eps }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 =>
            {
                return Err(Error::InvalidArgument("adam hyperparameters out of range".into()));
            }
            _ => {}
        }
        Ok(Optimizer {
            kind,
            clip,
            weight_decay,
            slots: BTreeMap::new(),
        })
    }

    /// Applies one update to every trainable parameter that has a gradient.
    /// Parameters absent from `grads` are left bitwise untouched. On a
    /// non-finite gradient nothing is modified.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<StepReport> {
        let mut effective: Vec<(ParamId, Vec<f64>)> = Vec::new();
        for (id, g) in grads.params() {
            if !store.is_trainable(id) {
                continue;
            }
            let p = store.get(id);
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "optimizer_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            let mut v = g.values().to_vec();
            if self.weight_decay > 0.0 {
                for (gv, pv) in v.iter_mut().zip(p.values()) {
                    *gv += self.weight_decay * pv;
                }
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NumericFault(format!("gradient of {}", store.name(id))));
            }
            effective.push((id, v));
        }
        let norm = effective
            .iter()
            .flat_map(|(_, v)| v)
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        let scale = match self.clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        for (id, mut g) in effective {
            if scale != 1.0 {
                g.iter_mut().for_each(|x| *x *= scale);
            }
            let p = store.get_mut(id).values_mut();
            let slot = self.slots.entry(id).or_default();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (pv, gv) in p.iter_mut().zip(&g) {
                        *pv -= lr * gv;
                    }
                }
                OptimizerKind::Nesterov { momentum } => {
                    if slot.first.len() != g.len() {
                        slot.first = vec![0.0; g.len()];
                    }
                    for ((pv, gv), a) in p.iter_mut().zip(&g).zip(slot.first.iter_mut()) {
                        *a = momentum * *a + gv;
                        *pv -= lr * (gv + momentum * *a);
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    if slot.first.len() != g.len() {
                        slot.first = vec![0.0; g.len()];
                        slot.second = vec![0.0; g.len()];
                    }
                    slot.steps += 1;
                    let c1 = 1.0 - beta1.powi(slot.steps as i32);
                    let c2 = 1.0 - beta2.powi(slot.steps as i32);
                    for i in 0..g.len() {
                        slot.first[i] = beta1 * slot.first[i] + (1.0 - beta1) * g[i];
                        slot.second[i] = beta2 * slot.second[i] + (1.0 - beta2) * g[i] * g[i];
                        let mh = slot.first[i] / c1;
                        let vh = slot.second[i] / c2;
                        p[i] -= lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        Ok(StepReport { grad_norm: norm, scale })
    }
}
