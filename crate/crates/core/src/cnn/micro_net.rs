use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{he_kernel, BatchNorm, ConvBn, Dense, Mode, SepConvBn};
use crate::space::{Genome, MicroCell, MicroGenome, MicroOp, SpaceSpec};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MicroConfig {
    pub nodes: usize,
    pub channels: usize,
    pub classes: usize,
    pub in_channels: usize,
    /// Convolution cells per block; three blocks separated by two
    /// reduction cells.
    pub repeats: usize,
    /// Batch norm after each cell's 1x1 output projection.
    pub projection_bn: bool,
}

#[derive(Clone, Debug, PartialEq)]
struct SlotOps {
    sep3: [SepConvBn; 2],
    sep5: [SepConvBn; 2],
    /// Strided 1x1 projection standing in for identity in reduction cells.
    reduce_identity: Option<ConvBn>,
}

#[derive(Clone, Debug, PartialEq)]
struct CellParams {
    reduction: bool,
    /// Present when the cell two back sits at twice the resolution.
    calibrate: Option<ConvBn>,
    /// `slots[i - 3][s]` for node `i`, slot `s` (0 = a, 1 = b).
    slots: Vec<[SlotOps; 2]>,
    /// Reduction cells: strided projections for loose input nodes 1, 2.
    loose_inputs: Option<[ConvBn; 2]>,
    /// `out_blocks[i - 1]` maps node `i` inside the output projection.
    out_blocks: Vec<ParamId>,
    out_bn: Option<BatchNorm>,
}

/// Stacked-cell supernet: stem, then `repeats` convolution cells, a
/// reduction cell, `repeats` convolution cells, a reduction cell,
/// `repeats` convolution cells, global average pooling and a classifier.
/// Every cell position owns its parameters; all genomes share them.
#[derive(Clone, Debug, PartialEq)]
pub struct MicroSupernet {
    pub config: MicroConfig,
    pub store: ParamStore,
    stem: ConvBn,
    cells: Vec<CellParams>,
    classifier: Dense,
}

/// Node values and output of one cell application.
pub struct CellResult {
    pub nodes: Vec<Var>,
    pub output: Var,
}

impl MicroSupernet {
    pub fn new<R: Rng + ?Sized>(config: MicroConfig, rng: &mut R) -> Result<Self> {
        if config.nodes < 3 || config.channels == 0 || config.classes == 0 || config.repeats == 0 {
            return Err(Error::InvalidArgument(format!("degenerate micro config {config:?}")));
        }
        let c = config.channels;
        let mut store = ParamStore::new();
        let stem = ConvBn::new(&mut store, "micro/stem", 3, config.in_channels, c, rng);
        let layout = Self::layout(config.repeats);
        let mut cells = Vec::new();
        for (pos, &reduction) in layout.iter().enumerate() {
            let p = format!("micro/cell{pos}");
            let calibrate = (pos >= 1 && layout[pos - 1]).then(|| ConvBn::new(&mut store, &format!("{p}/calibrate"), 1, c, c, rng));
            let mut slots = Vec::new();
            for i in 3..=config.nodes {
                let mk = |store: &mut ParamStore, rng: &mut R, s: usize| SlotOps {
                    sep3: [0, 1].map(|r| SepConvBn::new(store, &format!("{p}/node{i}/{s}/sepconv3_{r}"), 3, c, rng)),
                    sep5: [0, 1].map(|r| SepConvBn::new(store, &format!("{p}/node{i}/{s}/sepconv5_{r}"), 5, c, rng)),
                    reduce_identity: reduction.then(|| ConvBn::new(store, &format!("{p}/node{i}/{s}/identity"), 1, c, c, rng)),
                };
                let a = mk(&mut store, rng, 0);
                let b = mk(&mut store, rng, 1);
                slots.push([a, b]);
            }
            let loose_inputs = reduction.then(|| [1, 2].map(|j| ConvBn::new(&mut store, &format!("{p}/loose{j}"), 1, c, c, rng)));
            let out_blocks = (1..=config.nodes)
                .map(|i| store.add(format!("{p}/out{i}"), he_kernel(1, c, c, rng)))
                .collect();
            let out_bn = config.projection_bn.then(|| BatchNorm::new(&mut store, &format!("{p}/out_bn"), c));
            cells.push(CellParams {
                reduction,
                calibrate,
                slots,
                loose_inputs,
                out_blocks,
                out_bn,
            });
        }
        let classifier = Dense::new(&mut store, "micro/classifier", c, config.classes, rng);
        Ok(MicroSupernet {
            config,
            store,
            stem,
            cells,
            classifier,
        })
    }

    /// Reduction flag of every cell position.
    pub fn layout(repeats: usize) -> Vec<bool> {
        let mut v = Vec::new();
        for block in 0..3 {
            v.extend(std::iter::repeat(false).take(repeats));
            if block < 2 {
                v.push(true);
            }
        }
        v
    }

    pub fn spec(&self) -> SpaceSpec {
        SpaceSpec::micro(self.config.nodes).expect("validated at construction")
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn is_reduction(&self, position: usize) -> bool {
        self.cells[position].reduction
    }

    fn genome<'g>(&self, genome: &'g Genome) -> Result<&'g MicroGenome> {
        genome.validate(&self.spec())?;
        Ok(genome.as_micro().expect("validated as micro"))
    }

    fn op_ids(&self, position: usize, node: usize, slot: usize, op: MicroOp, input: usize) -> Vec<ParamId> {
        let s = &self.cells[position].slots[node - 3][slot];
        match op {
            // Only strided (cell-input) identities go through the projection.
            MicroOp::Identity if input <= 2 => s.reduce_identity.map(|c| c.params()).unwrap_or_default(),
            MicroOp::Identity => vec![],
            MicroOp::SepConv3 => s.sep3.iter().flat_map(|c| c.params()).collect(),
            MicroOp::SepConv5 => s.sep5.iter().flat_map(|c| c.params()).collect(),
            MicroOp::AvgPool3 | MicroOp::MaxPool3 => vec![],
        }
    }

    /// Parameters that only some genomes read: op weights per (cell
    /// position, node, slot, op) and output blocks of loose ends.
    pub fn op_params(&self, genome: &Genome) -> Result<Vec<ParamId>> {
        let g = self.genome(genome)?;
        let mut ids = Vec::new();
        for (pos, cp) in self.cells.iter().enumerate() {
            let cell = if cp.reduction { &g.reduce } else { &g.conv };
            for (k, n) in cell.nodes.iter().enumerate() {
                let i = k + 3;
                ids.extend(self.op_ids(pos, i, 0, n.op_a, n.prev_a));
                ids.extend(self.op_ids(pos, i, 1, n.op_b, n.prev_b));
            }
            for j in cell.loose_ends() {
                ids.push(cp.out_blocks[j - 1]);
                if let (Some(l), true) = (&cp.loose_inputs, j <= 2) {
                    ids.extend(l[j - 1].params());
                }
            }
        }
        Ok(ids)
    }

    /// Applies `op` for slot `slot` (0 = a, 1 = b) of node `node` in cell
    /// `position`.
    #[allow(clippy::too_many_arguments)]
    pub fn apply_op(&self, tape: &mut Tape, position: usize, node: usize, slot: usize, op: MicroOp, x: Var, stride: usize, mode: Mode) -> Result<Var> {
        let s = &self.cells[position].slots[node - 3][slot];
        let st = &self.store;
        match op {
            MicroOp::Identity if stride == 1 => Ok(x),
            MicroOp::Identity => s
                .reduce_identity
                .ok_or_else(|| Error::InvalidArgument("strided identity outside a reduction cell".into()))?
                .forward(tape, st, x, stride, mode),
            MicroOp::SepConv3 => {
                let y = s.sep3[0].forward(tape, st, x, stride, mode)?;
                s.sep3[1].forward(tape, st, y, 1, mode)
            }
            MicroOp::SepConv5 => {
                let y = s.sep5[0].forward(tape, st, x, stride, mode)?;
                s.sep5[1].forward(tape, st, y, 1, mode)
            }
            MicroOp::AvgPool3 => tape.avg_pool(x, 3, stride),
            MicroOp::MaxPool3 => tape.max_pool(x, 3, stride),
        }
    }

    /// One cell. `h1` is the output of the cell two back, `h2` of the
    /// previous cell.
    pub fn cell_forward(&self, tape: &mut Tape, position: usize, cell: &MicroCell, h1: Var, h2: Var, mode: Mode) -> Result<CellResult> {
        let cp = self.cells.get(position).ok_or_else(|| Error::InvalidArgument(format!("no cell at position {position}")))?;
        if cell.size() != self.config.nodes {
            return Err(Error::SpecMismatch(format!("cell of {} nodes in a {}-node supernet", cell.size(), self.config.nodes)));
        }
        let st = &self.store;
        let h1 = match &cp.calibrate {
            Some(c) => c.forward(tape, st, h1, 2, mode)?,
            None => h1,
        };
        let mut nodes = vec![h1, h2];
        for (k, n) in cell.nodes.iter().enumerate() {
            let i = k + 3;
            let stride = |p: usize| if cp.reduction && p <= 2 { 2 } else { 1 };
            let a = self.apply_op(tape, position, i, 0, n.op_a, nodes[n.prev_a - 1], stride(n.prev_a), mode)?;
            let b = self.apply_op(tape, position, i, 1, n.op_b, nodes[n.prev_b - 1], stride(n.prev_b), mode)?;
            nodes.push(tape.add(a, b)?);
        }
        let mut parts = Vec::new();
        let mut blocks = Vec::new();
        for j in cell.loose_ends() {
            let mut v = nodes[j - 1];
            if let (Some(l), true) = (&cp.loose_inputs, j <= 2) {
                v = l[j - 1].forward(tape, st, v, 2, mode)?;
            }
            parts.push(v);
            blocks.push(tape.param(st, cp.out_blocks[j - 1])?);
        }
        let x = if parts.len() == 1 { parts[0] } else { tape.concat(&parts, 3)? };
        let w = if blocks.len() == 1 { blocks[0] } else { tape.concat(&blocks, 2)? };
        let r = tape.relu(x)?;
        let mut output = tape.conv2d(r, w, 1)?;
        if let Some(bn) = &cp.out_bn {
            output = bn.forward(tape, st, output, mode)?;
        }
        Ok(CellResult { nodes, output })
    }

    /// Logits plus the output of every cell.
    pub fn forward_traced(&self, tape: &mut Tape, genome: &Genome, images: Var, mode: Mode) -> Result<(Var, Vec<Var>)> {
        let g = self.genome(genome)?;
        let shape = tape.shape(images).to_vec();
        if shape.len() != 4 || shape[3] != self.config.in_channels {
            return Err(Error::Shape {
                op: "forward_micro",
                lhs: shape,
                rhs: vec![0, 0, 0, self.config.in_channels],
            });
        }
        let st = &self.store;
        let w = tape.param(st, self.stem.kernel)?;
        let y = tape.conv2d(images, w, 1)?;
        let stem = self.stem.bn.forward(tape, st, y, mode)?;
        let (mut h1, mut h2) = (stem, stem);
        let mut outs = Vec::new();
        for (pos, cp) in self.cells.iter().enumerate() {
            let cell = if cp.reduction { &g.reduce } else { &g.conv };
            let out = self.cell_forward(tape, pos, cell, h1, h2, mode)?.output;
            h1 = h2;
            h2 = out;
            outs.push(out);
        }
        let pooled = tape.global_avg_pool(h2)?;
        let logits = self.classifier.forward(tape, st, pooled)?;
        Ok((logits, outs))
    }

    pub fn forward(&self, tape: &mut Tape, genome: &Genome, images: Var, mode: Mode) -> Result<Var> {
        Ok(self.forward_traced(tape, genome, images, mode)?.0)
    }

    pub fn logits(&self, genome: &Genome, images: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone())?;
        let y = self.forward(&mut tape, genome, x, mode)?;
        Ok(tape.value(y).clone())
    }
}
