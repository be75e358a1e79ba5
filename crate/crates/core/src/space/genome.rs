use sha2::{Digest, Sha256};

use super::{SpaceKind, SpaceSpec};
use crate::error::{Error, Result};

macro_rules! vocab {
    ($(#[$m:meta])* $name:ident { $($var:ident => $s:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name { $($var),+ }

        impl $name {
            pub const ALL: [$name; [$($s),+].len()] = [$($name::$var),+];
            pub const NAMES: [&'static str; [$($s),+].len()] = [$($s),+];

            pub fn id(self) -> usize {
                self as usize
            }

            pub fn from_id(id: usize) -> Option<Self> {
                Self::ALL.get(id).copied()
            }

            pub fn name(self) -> &'static str {
                Self::NAMES[self as usize]
            }

            pub fn parse(s: &str) -> Result<Self> {
                Self::NAMES
                    .iter()
                    .position(|n| *n == s)
                    .map(|i| Self::ALL[i])
                    .ok_or_else(|| Error::UnknownOp(s.to_string()))
            }
        }
    };
}

vocab!(
    /// Recurrent-cell activation functions.
    Activation { Tanh => "tanh", Relu => "relu", Identity => "identity", Sigmoid => "sigmoid" }
);

vocab!(
    MacroOp {
        Conv3 => "conv3",
        Conv5 => "conv5",
        SepConv3 => "sepconv3",
        SepConv5 => "sepconv5",
        MaxPool3 => "maxpool3",
        AvgPool3 => "avgpool3",
    }
);

vocab!(
    MicroOp {
        Identity => "identity",
        SepConv3 => "sepconv3",
        SepConv5 => "sepconv5",
        AvgPool3 => "avgpool3",
        MaxPool3 => "maxpool3",
    }
);

/// Recurrent cell. Node 1 reads the input and previous hidden state; node
/// `l >= 2` reads node `prev[l - 2]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RnnGenome {
    pub activations: Vec<Activation>,
    pub prev: Vec<usize>,
}

impl RnnGenome {
    pub fn nodes(&self) -> usize {
        self.activations.len()
    }

    pub fn loose_ends(&self) -> Vec<usize> {
        (1..=self.nodes()).filter(|i| !self.prev.contains(i)).collect()
    }

    /// Node `l`'s predecessor, `None` for node 1.
    pub fn prev_of(&self, l: usize) -> Option<usize> {
        if l >= 2 {
            Some(self.prev[l - 2])
        } else {
            None
        }
    }
}

/// Whole convolutional network. `skips[k - 1]` bit `j - 1` set means layer
/// `k` also reads layer `j`'s output.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MacroGenome {
    pub ops: Vec<MacroOp>,
    pub skips: Vec<u64>,
}

impl MacroGenome {
    pub fn layers(&self) -> usize {
        self.ops.len()
    }

    /// Skip sources of layer `k`, ascending.
    pub fn skip_sources(&self, k: usize) -> Vec<usize> {
        let bits = self.skips[k - 1];
        (1..k).filter(|j| bits >> (j - 1) & 1 == 1).collect()
    }

    pub fn has_skip(&self, from: usize, to: usize) -> bool {
        from < to && self.skips[to - 1] >> (from - 1) & 1 == 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MicroNode {
    pub prev_a: usize,
    pub prev_b: usize,
    pub op_a: MicroOp,
    pub op_b: MicroOp,
}

/// One cell; `nodes[i - 3]` describes node `i`. Nodes 1 and 2 are the
/// outputs of the two preceding cells.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MicroCell {
    pub nodes: Vec<MicroNode>,
}

impl MicroCell {
    /// Node count B including the two inputs.
    pub fn size(&self) -> usize {
        self.nodes.len() + 2
    }

    pub fn node(&self, i: usize) -> &MicroNode {
        &self.nodes[i - 3]
    }

    pub fn loose_ends(&self) -> Vec<usize> {
        let used = |i: usize| self.nodes.iter().any(|n| n.prev_a == i || n.prev_b == i);
        (1..=self.size()).filter(|i| !used(*i)).collect()
    }

    fn decisions(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .flat_map(|n| [n.prev_a - 1, n.prev_b - 1, n.op_a.id(), n.op_b.id()])
            .collect()
    }

    pub(crate) fn from_decisions(d: &[usize]) -> Self {
        MicroCell {
            nodes: d
                .chunks(4)
                .map(|c| MicroNode {
                    prev_a: c[0] + 1,
                    prev_b: c[1] + 1,
                    op_a: MicroOp::ALL[c[2]],
                    op_b: MicroOp::ALL[c[3]],
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MicroGenome {
    pub conv: MicroCell,
    pub reduce: MicroCell,
}

/// An architecture from one of the three spaces.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Genome {
    Rnn(RnnGenome),
    Macro(MacroGenome),
    Micro(MicroGenome),
}

impl Genome {
    pub fn spec(&self) -> SpaceSpec {
        match self {
            Genome::Rnn(g) => SpaceSpec::rnn(g.nodes()),
            Genome::Macro(g) => SpaceSpec::macro_cnn(g.layers()),
            Genome::Micro(g) => SpaceSpec::micro(g.conv.size()),
        }
        .expect("genome carries a valid node count")
    }

    /// Flat decision vector in the layout of [`SpaceSpec::decisions`].
    pub fn to_decisions(&self) -> Vec<usize> {
        match self {
            Genome::Rnn(g) => {
                let mut d = vec![g.activations[0].id()];
                for l in 2..=g.nodes() {
                    d.push(g.prev[l - 2] - 1);
                    d.push(g.activations[l - 1].id());
                }
                d
            }
            Genome::Macro(g) => {
                let mut d = Vec::new();
                for k in 1..=g.layers() {
                    d.push(g.ops[k - 1].id());
                    for j in 1..k {
                        d.push(usize::from(g.has_skip(j, k)));
                    }
                }
                d
            }
            Genome::Micro(g) => {
                let mut d = g.conv.decisions();
                d.extend(g.reduce.decisions());
                d
            }
        }
    }

    /// Inverse of [`Genome::to_decisions`]. Out-of-range values are
    /// reported with their decision position.
    pub fn from_decisions(spec: &SpaceSpec, d: &[usize]) -> Result<Self> {
        let layout = spec.decisions();
        if d.len() != layout.len() {
            return Err(Error::SpecMismatch(format!(
                "{} decisions for a space with {}",
                d.len(),
                layout.len()
            )));
        }
        for (i, (v, dec)) in d.iter().zip(&layout).enumerate() {
            if *v >= dec.choices {
                return Err(Error::Range {
                    decision: i,
                    message: format!("value {v} with only {} choices", dec.choices),
                });
            }
        }
        let n = spec.nodes();
        Ok(match spec.kind() {
            SpaceKind::Rnn => {
                let mut activations = vec![Activation::ALL[d[0]]];
                let mut prev = Vec::new();
                for pair in d[1..].chunks(2) {
                    prev.push(pair[0] + 1);
                    activations.push(Activation::ALL[pair[1]]);
                }
                Genome::Rnn(RnnGenome { activations, prev })
            }
            SpaceKind::Macro => {
                let mut ops = Vec::new();
                let mut skips = Vec::new();
                let mut at = 0;
                for k in 1..=n {
                    ops.push(MacroOp::ALL[d[at]]);
                    at += 1;
                    let mut bits = 0u64;
                    for j in 1..k {
                        if d[at] == 1 {
                            bits |= 1 << (j - 1);
                        }
                        at += 1;
                    }
                    skips.push(bits);
                }
                Genome::Macro(MacroGenome { ops, skips })
            }
            SpaceKind::Micro => {
                let half = d.len() / 2;
                Genome::Micro(MicroGenome {
                    conv: MicroCell::from_decisions(&d[..half]),
                    reduce: MicroCell::from_decisions(&d[half..]),
                })
            }
        })
    }

    /// Checks every invariant of the genome against `spec`.
    pub fn validate(&self, spec: &SpaceSpec) -> Result<()> {
        if self.spec() != *spec {
            return Err(Error::SpecMismatch(format!(
                "genome is {} with {} nodes, expected {} with {}",
                self.spec().kind().name(),
                self.spec().nodes(),
                spec.kind().name(),
                spec.nodes()
            )));
        }
        match self {
            Genome::Rnn(g) => {
                if g.prev.len() + 1 != g.activations.len() {
                    return Err(Error::SpecMismatch("prev list length must be N - 1".into()));
                }
                for (i, p) in g.prev.iter().enumerate() {
                    let node = i + 2;
                    if *p == 0 || *p >= node {
                        return Err(Error::Range {
                            decision: node - 1,
                            message: format!("node {node} reads node {p}"),
                        });
                    }
                }
            }
            Genome::Macro(g) => {
                if g.skips.len() != g.ops.len() {
                    return Err(Error::SpecMismatch("one skip set per layer required".into()));
                }
                for (i, s) in g.skips.iter().enumerate() {
                    let k = i + 1;
                    let allowed = if k == 1 { 0 } else { (1u64 << (k - 1)) - 1 };
                    if s & !allowed != 0 {
                        return Err(Error::Range {
                            decision: i,
                            message: format!("layer {k} skips from a layer not before it"),
                        });
                    }
                }
            }
            Genome::Micro(g) => {
                if g.reduce.nodes.len() != g.conv.nodes.len() {
                    return Err(Error::SpecMismatch("conv and reduction cells differ in size".into()));
                }
                for (c, cell) in [&g.conv, &g.reduce].into_iter().enumerate() {
                    for (i, node) in cell.nodes.iter().enumerate() {
                        let idx = i + 3;
                        for p in [node.prev_a, node.prev_b] {
                            if p == 0 || p >= idx {
                                return Err(Error::Range {
                                    decision: c * cell.nodes.len() + i,
                                    message: format!("node {idx} reads node {p}"),
                                });
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Short stable identifier derived from the text form.
    pub fn id(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn as_rnn(&self) -> Option<&RnnGenome> {
        match self {
            Genome::Rnn(g) => Some(g),
            _ => None,
        }
    }

    pub fn as_macro(&self) -> Option<&MacroGenome> {
        match self {
            Genome::Macro(g) => Some(g),
            _ => None,
        }
    }

    pub fn as_micro(&self) -> Option<&MicroGenome> {
        match self {
            Genome::Micro(g) => Some(g),
            _ => None,
        }
    }
}
