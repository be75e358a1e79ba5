use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{he_kernel, BatchNorm, ConvBn, Dense, Mode, SepConvBn};
use crate::space::{Genome, MacroGenome, MacroOp, SpaceSpec};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MacroConfig {
    pub layers: usize,
    pub channels: usize,
    pub classes: usize,
    pub in_channels: usize,
    /// Batch norm after each layer's 1x1 input projection.
    pub projection_bn: bool,
}

#[derive(Clone, Debug, PartialEq)]
struct MacroLayer {
    /// `blocks[0]` maps the direct predecessor, `blocks[j]` the skip
    /// from layer `j`; each is a `[1, 1, C, C]` slice of the projection.
    blocks: Vec<ParamId>,
    bn: Option<BatchNorm>,
    conv3: ConvBn,
    conv5: ConvBn,
    sep3: SepConvBn,
    sep5: SepConvBn,
}

/// Whole-network supernet. Layer `k` reads the concatenation of its
/// direct predecessor and its skip sources, projects it back to `C`
/// channels with a 1x1 convolution whose weight is assembled from
/// per-source row blocks, then applies the chosen op.
#[derive(Clone, Debug, PartialEq)]
pub struct MacroSupernet {
    pub config: MacroConfig,
    pub store: ParamStore,
    stem: ConvBn,
    layers: Vec<MacroLayer>,
    classifier: Dense,
}

/// Per-layer outputs of one forward pass.
pub struct MacroTrace {
    pub logits: Var,
    /// Output of the stem, then of layers 1..=L.
    pub layer_outputs: Vec<Var>,
    /// Concatenated input of each layer before projection.
    pub layer_inputs: Vec<Var>,
}

impl MacroSupernet {
    pub fn new<R: Rng + ?Sized>(config: MacroConfig, rng: &mut R) -> Result<Self> {
        if config.layers == 0 || config.channels == 0 || config.classes == 0 || config.in_channels == 0 {
            return Err(Error::InvalidArgument(format!("degenerate macro config {config:?}")));
        }
        let c = config.channels;
        let mut store = ParamStore::new();
        let stem = ConvBn::new(&mut store, "macro/stem", 3, config.in_channels, c, rng);
        let mut layers = Vec::new();
        for k in 1..=config.layers {
            let p = format!("macro/layer{k}");
            let blocks = (0..k)
                .map(|j| store.add(format!("{p}/proj{j}"), he_kernel(1, c, c, rng)))
                .collect();
            let bn = config.projection_bn.then(|| BatchNorm::new(&mut store, &format!("{p}/proj_bn"), c));
            layers.push(MacroLayer {
                blocks,
                bn,
                conv3: ConvBn::new(&mut store, &format!("{p}/conv3"), 3, c, c, rng),
                conv5: ConvBn::new(&mut store, &format!("{p}/conv5"), 5, c, c, rng),
                sep3: SepConvBn::new(&mut store, &format!("{p}/sepconv3"), 3, c, rng),
                sep5: SepConvBn::new(&mut store, &format!("{p}/sepconv5"), 5, c, rng),
            });
        }
        let classifier = Dense::new(&mut store, "macro/classifier", c, config.classes, rng);
        Ok(MacroSupernet {
            config,
            store,
            stem,
            layers,
            classifier,
        })
    }

    pub fn spec(&self) -> SpaceSpec {
        SpaceSpec::macro_cnn(self.config.layers).expect("validated at construction")
    }

    fn genome<'g>(&self, genome: &'g Genome) -> Result<&'g MacroGenome> {
        genome.validate(&self.spec())?;
        Ok(genome.as_macro().expect("validated as macro"))
    }

    /// Parameters that only some genomes read: projection blocks of the
    /// chosen skips and the chosen op's weights.
    pub fn op_params(&self, genome: &Genome) -> Result<Vec<ParamId>> {
        let g = self.genome(genome)?;
        let mut ids = Vec::new();
        for k in 1..=g.layers() {
            let layer = &self.layers[k - 1];
            for j in g.skip_sources(k) {
                ids.push(layer.blocks[j]);
            }
            ids.extend(match g.ops[k - 1] {
                MacroOp::Conv3 => layer.conv3.params(),
                MacroOp::Conv5 => layer.conv5.params(),
                MacroOp::SepConv3 => layer.sep3.params(),
                MacroOp::SepConv5 => layer.sep5.params(),
                MacroOp::MaxPool3 | MacroOp::AvgPool3 => vec![],
            });
        }
        Ok(ids)
    }

    pub fn forward(&self, tape: &mut Tape, genome: &Genome, images: Var, mode: Mode) -> Result<Var> {
        Ok(self.forward_traced(tape, genome, images, mode)?.logits)
    }

    pub fn forward_traced(&self, tape: &mut Tape, genome: &Genome, images: Var, mode: Mode) -> Result<MacroTrace> {
        let g = self.genome(genome)?;
        let shape = tape.shape(images).to_vec();
        if shape.len() != 4 || shape[3] != self.config.in_channels {
            return Err(Error::Shape {
                op: "forward_macro",
                lhs: shape,
                rhs: vec![0, 0, 0, self.config.in_channels],
            });
        }
        let s = &self.store;
        // The stem sees raw pixels; no relu in front of it.
        let w = tape.param(s, self.stem.kernel)?;
        let y = tape.conv2d(images, w, 1)?;
        let stem = self.stem.bn.forward(tape, s, y, mode)?;
        let mut outputs = vec![stem];
        let mut inputs = Vec::new();
        for k in 1..=g.layers() {
            let layer = &self.layers[k - 1];
            let skips = g.skip_sources(k);
            let mut parts = vec![outputs[k - 1]];
            let mut blocks = vec![tape.param(s, layer.blocks[0])?];
            for &j in &skips {
                parts.push(outputs[j]);
                blocks.push(tape.param(s, layer.blocks[j])?);
            }
            let x = if parts.len() == 1 { parts[0] } else { tape.concat(&parts, 3)? };
            inputs.push(x);
            let w = if blocks.len() == 1 { blocks[0] } else { tape.concat(&blocks, 2)? };
            let r = tape.relu(x)?;
            let mut y = tape.conv2d(r, w, 1)?;
            if let Some(bn) = &layer.bn {
                y = bn.forward(tape, s, y, mode)?;
            }
            let out = match g.ops[k - 1] {
                MacroOp::Conv3 => layer.conv3.forward(tape, s, y, 1, mode)?,
                MacroOp::Conv5 => layer.conv5.forward(tape, s, y, 1, mode)?,
                MacroOp::SepConv3 => layer.sep3.forward(tape, s, y, 1, mode)?,
                MacroOp::SepConv5 => layer.sep5.forward(tape, s, y, 1, mode)?,
                MacroOp::MaxPool3 => tape.max_pool(y, 3, 1)?,
                MacroOp::AvgPool3 => tape.avg_pool(y, 3, 1)?,
            };
            outputs.push(out);
        }
        let last = *outputs.last().expect("at least the stem");
        let pooled = tape.global_avg_pool(last)?;
        let logits = self.classifier.forward(tape, s, pooled)?;
        Ok(MacroTrace {
            logits,
            layer_outputs: outputs,
            layer_inputs: inputs,
        })
    }

    /// Evaluates logits without recording gradients into any caller tape.
    pub fn logits(&self, genome: &Genome, images: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone())?;
        let y = self.forward(&mut tape, genome, x, mode)?;
        Ok(tape.value(y).clone())
    }
}
