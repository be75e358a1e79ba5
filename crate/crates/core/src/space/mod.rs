//! The three search spaces: genome types, decision layouts, counting,
//! enumeration, uniform sampling and the line-oriented text format.
//!
//! Every genome is equivalent to a flat vector of decisions, each an index
//! into a fixed number of choices. Counting is the product of those choice
//! counts; enumeration is an odometer over the vector.

mod enumerate;
mod genome;
mod text;

pub use enumerate::{enumerate, enumerate_cells, Enumeration};
pub use genome::{Activation, Genome, MacroGenome, MacroOp, MicroCell, MicroGenome, MicroNode, MicroOp, RnnGenome};

use num_bigint::BigUint;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpaceKind {
    Rnn,
    Macro,
    Micro,
}

impl SpaceKind {
    pub fn name(self) -> &'static str {
        match self {
            SpaceKind::Rnn => "rnn",
            SpaceKind::Macro => "macro",
            SpaceKind::Micro => "micro",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rnn" => Ok(SpaceKind::Rnn),
            "macro" => Ok(SpaceKind::Macro),
            "micro" => Ok(SpaceKind::Micro),
            other => Err(Error::InvalidArgument(format!("unknown search space `{other}`"))),
        }
    }
}

/// A search space: kind plus node count (N, L or B).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SpaceSpec {
    kind: SpaceKind,
    nodes: usize,
}

/// What a single decision selects.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DecisionKind {
    Activation,
    Op,
    /// A previous node; the choice count varies with position.
    Index,
    /// Presence of one candidate skip edge.
    Skip,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decision {
    pub kind: DecisionKind,
    pub choices: usize,
}

impl SpaceSpec {
    pub fn new(kind: SpaceKind, nodes: usize) -> Result<Self> {
        let min = if kind == SpaceKind::Micro { 3 } else { 1 };
        if nodes < min {
            return Err(Error::InvalidArgument(format!(
                "{} space needs at least {min} nodes, got {nodes}",
                kind.name()
            )));
        }
        if kind == SpaceKind::Macro && nodes > 64 {
            return Err(Error::InvalidArgument("macro space supports at most 64 layers".into()));
        }
        Ok(SpaceSpec { kind, nodes })
    }

    pub fn rnn(n: usize) -> Result<Self> {
        Self::new(SpaceKind::Rnn, n)
    }

    pub fn macro_cnn(l: usize) -> Result<Self> {
        Self::new(SpaceKind::Macro, l)
    }

    pub fn micro(b: usize) -> Result<Self> {
        Self::new(SpaceKind::Micro, b)
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// Operation vocabulary in id order.
    pub fn vocabulary(&self) -> &'static [&'static str] {
        match self.kind {
            SpaceKind::Rnn => &Activation::NAMES,
            SpaceKind::Macro => &MacroOp::NAMES,
            SpaceKind::Micro => &MicroOp::NAMES,
        }
    }

    /// Choice count of each decision kind that occurs with a fixed size.
    pub fn vocab_size(&self, kind: DecisionKind) -> usize {
        match kind {
            DecisionKind::Activation | DecisionKind::Op => self.vocabulary().len(),
            DecisionKind::Skip => 2,
            DecisionKind::Index => match self.kind {
                SpaceKind::Micro => self.nodes - 1,
                _ => self.nodes.saturating_sub(1).max(1),
            },
        }
    }

    /// Decision kinds used by this space, in a fixed order.
    pub fn decision_kinds(&self) -> Vec<DecisionKind> {
        match self.kind {
            SpaceKind::Rnn if self.nodes == 1 => vec![DecisionKind::Activation],
            SpaceKind::Rnn => vec![DecisionKind::Activation, DecisionKind::Index],
            SpaceKind::Macro if self.nodes == 1 => vec![DecisionKind::Op],
            SpaceKind::Macro => vec![DecisionKind::Op, DecisionKind::Skip],
            SpaceKind::Micro => vec![DecisionKind::Op, DecisionKind::Index],
        }
    }

    /// The flat decision layout.
    ///
    /// - rnn: `[act_1]`, then per node l >= 2: `[prev_l, act_l]`
    /// - macro: per layer k: `[op_k, skip_1, .., skip_{k-1}]`
    /// - micro: conv cell then reduction cell; per node i >= 3:
    ///   `[prev_a, prev_b, op_a, op_b]`
    pub fn decisions(&self) -> Vec<Decision> {
        let n = self.nodes;
        let mut out = Vec::new();
        let d = |kind, choices| Decision { kind, choices };
        match self.kind {
            SpaceKind::Rnn => {
                out.push(d(DecisionKind::Activation, 4));
                for l in 2..=n {
                    out.push(d(DecisionKind::Index, l - 1));
                    out.push(d(DecisionKind::Activation, 4));
                }
            }
            SpaceKind::Macro => {
                for k in 1..=n {
                    out.push(d(DecisionKind::Op, 6));
                    for _ in 1..k {
                        out.push(d(DecisionKind::Skip, 2));
                    }
                }
            }
            SpaceKind::Micro => {
                out = self.cell_decisions();
                out.extend(self.cell_decisions());
            }
        }
        out
    }

    /// Decision layout of one micro cell.
    pub fn cell_decisions(&self) -> Vec<Decision> {
        let mut out = Vec::new();
        for i in 3..=self.nodes {
            out.push(Decision {
                kind: DecisionKind::Index,
                choices: i - 1,
            });
            out.push(Decision {
                kind: DecisionKind::Index,
                choices: i - 1,
            });
            out.push(Decision {
                kind: DecisionKind::Op,
                choices: 5,
            });
            out.push(Decision {
                kind: DecisionKind::Op,
                choices: 5,
            });
        }
        out
    }
}

/// Number of distinct genomes: the product of per-decision choice counts.
pub fn count_space(spec: &SpaceSpec) -> BigUint {
    spec.decisions()
        .iter()
        .fold(BigUint::from(1u32), |acc, d| acc * BigUint::from(d.choices))
}

/// Number of distinct single micro cells.
pub fn count_cell(spec: &SpaceSpec) -> BigUint {
    spec.cell_decisions()
        .iter()
        .fold(BigUint::from(1u32), |acc, d| acc * BigUint::from(d.choices))
}

/// Every decision uniform and independent; macro skips are Bernoulli(0.5).
pub fn sample_uniform<R: Rng + ?Sized>(spec: &SpaceSpec, rng: &mut R) -> Genome {
    sample_uniform_with_skip(spec, 0.5, rng)
}

/// As [`sample_uniform`] with a custom per-edge skip probability.
pub fn sample_uniform_with_skip<R: Rng + ?Sized>(spec: &SpaceSpec, skip_prob: f64, rng: &mut R) -> Genome {
    let decisions: Vec<usize> = spec
        .decisions()
        .iter()
        .map(|d| match d.kind {
            DecisionKind::Skip => usize::from(rng.gen_bool(skip_prob)),
            _ => rng.gen_range(0..d.choices),
        })
        .collect();
    Genome::from_decisions(spec, &decisions).expect("sampled decisions are in range")
}

/// Loose ends: node indices (1-based) that no later node consumes.
pub fn loose_ends(genome: &Genome) -> Vec<usize> {
    match genome {
        Genome::Rnn(g) => g.loose_ends(),
        Genome::Macro(g) => vec![g.ops.len()],
        Genome::Micro(g) => g.conv.loose_ends(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_closed_forms() {
        assert_eq!(count_space(&SpaceSpec::rnn(1).unwrap()), BigUint::from(4u32));
        assert_eq!(count_space(&SpaceSpec::rnn(3).unwrap()), BigUint::from(128u32));
        assert_eq!(count_space(&SpaceSpec::macro_cnn(3).unwrap()), BigUint::from(1728u32));
        assert_eq!(count_cell(&SpaceSpec::micro(4).unwrap()), BigUint::from(22500u32));
        assert_eq!(count_space(&SpaceSpec::micro(4).unwrap()), BigUint::from(22500u64 * 22500));
    }

    #[test]
    fn rnn_twelve_is_about_6_7e14() {
        let c = count_space(&SpaceSpec::rnn(12).unwrap());
        // 4^12 * 11!
        assert_eq!(c, BigUint::from(16_777_216u64 * 39_916_800));
    }

    #[test]
    fn node_minimums() {
        assert!(SpaceSpec::rnn(0).is_err());
        assert!(SpaceSpec::micro(2).is_err());
        assert!(SpaceSpec::macro_cnn(1).is_ok());
    }
}
