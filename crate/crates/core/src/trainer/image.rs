use std::sync::Arc;

use super::{
    train_shared_phase, AccessCounters, Evaluation, Minibatch, RecordPhase, RunRecord, Sampler, SearchTask, SharedContext, Sink, TaskKind,
    TrainConfig,
};
use crate::cnn::{MacroConfig, MacroSupernet, MicroConfig, MicroSupernet};
use crate::controller::PolicyState;
use crate::data::{augment, ImageSet, Split};
use crate::error::{Error, Result};
use crate::layers::{accuracy, Mode};
use crate::rng::{child_rng, Rng};
use crate::space::{Genome, SpaceSpec};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

/// Either convolutional supernet.
#[derive(Clone, Debug, PartialEq)]
pub enum ImageNet {
    Macro(MacroSupernet),
    Micro(MicroSupernet),
}

impl ImageNet {
    pub fn spec(&self) -> SpaceSpec {
        match self {
            ImageNet::Macro(n) => n.spec(),
            ImageNet::Micro(n) => n.spec(),
        }
    }

    pub fn store(&self) -> &ParamStore {
        match self {
            ImageNet::Macro(n) => &n.store,
            ImageNet::Micro(n) => &n.store,
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            ImageNet::Macro(n) => &mut n.store,
            ImageNet::Micro(n) => &mut n.store,
        }
    }

    pub fn forward(&self, tape: &mut Tape, genome: &Genome, images: Var, mode: Mode) -> Result<Var> {
        match self {
            ImageNet::Macro(n) => n.forward(tape, genome, images, mode),
            ImageNet::Micro(n) => n.forward(tape, genome, images, mode),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ImageNetConfig {
    Macro(MacroConfig),
    Micro(MicroConfig),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageTaskConfig {
    pub net: ImageNetConfig,
    pub batch: usize,
    pub eval_batch: usize,
    pub augment: bool,
}

impl ImageTaskConfig {
    fn build<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<ImageNet> {
        Ok(match self.net {
            ImageNetConfig::Macro(c) => ImageNet::Macro(MacroSupernet::new(c, rng)?),
            ImageNetConfig::Micro(c) => ImageNet::Micro(MicroSupernet::new(c, rng)?),
        })
    }
}

/// Image classification with a convolutional supernet.
#[derive(Clone, Debug)]
pub struct ImageTask {
    pub config: ImageTaskConfig,
    pub net: ImageNet,
    data: Arc<ImageSet>,
    plan: Vec<Vec<usize>>,
    counters: Arc<AccessCounters>,
}

impl ImageTask {
    pub fn new(data: Arc<ImageSet>, config: ImageTaskConfig, rng: &mut Rng) -> Result<Self> {
        let (classes, channels) = match config.net {
            ImageNetConfig::Macro(c) => (c.classes, c.in_channels),
            ImageNetConfig::Micro(c) => (c.classes, c.in_channels),
        };
        if classes != data.classes || channels != data.channels {
            return Err(Error::SpecMismatch(format!(
                "network for {classes} classes x {channels} channels, data has {} x {}",
                data.classes, data.channels
            )));
        }
        if config.batch == 0 || config.eval_batch == 0 {
            return Err(Error::InvalidArgument("batch sizes must be positive".into()));
        }
        Ok(ImageTask {
            net: config.build(rng)?,
            config,
            data,
            plan: vec![],
            counters: Arc::default(),
        })
    }

    pub fn data(&self) -> &ImageSet {
        &self.data
    }

    /// Logits of every image in `split`, in index order.
    pub fn split_logits(&self, genome: &Genome, split: Split, mode: Mode) -> Result<(Tensor, Vec<usize>)> {
        let idx: Vec<usize> = self.data.range(split).collect();
        if idx.is_empty() {
            return Err(Error::Empty(format!("{} split has no images", split.name())));
        }
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for chunk in idx.chunks(self.config.eval_batch) {
            let (x, l) = self.data.gather(chunk);
            self.counters.record(split, chunk.len());
            let mut tape = Tape::new();
            let xv = tape.constant(x)?;
            let y = self.net.forward(&mut tape, genome, xv, mode)?;
            values.extend_from_slice(tape.value(y).values());
            labels.extend(l);
        }
        let classes = self.data.classes;
        Ok((Tensor::new(vec![labels.len(), classes], values)?, labels))
    }
}

fn xent(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone())?;
    let loss = tape.softmax_cross_entropy(l, labels)?;
    tape.value(loss).item()
}

impl SearchTask for ImageTask {
    fn kind(&self) -> TaskKind {
        TaskKind::ImageClassification
    }

    fn spec(&self) -> SpaceSpec {
        self.net.spec()
    }

    fn store(&self) -> &ParamStore {
        self.net.store()
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        self.net.store_mut()
    }

    fn begin_epoch(&mut self, rng: &mut Rng) -> Result<usize> {
        self.plan = self.data.epoch_batches(Split::Train, self.config.batch, rng);
        Ok(self.plan.len())
    }

    fn train_loss(&mut self, tape: &mut Tape, genome: &Genome, step: usize, rng: &mut Rng) -> Result<Var> {
        let idx = self
            .plan
            .get(step)
            .ok_or_else(|| Error::InvalidArgument(format!("no training batch {step}")))?;
        let (mut x, labels) = self.data.gather(idx);
        self.counters.record(Split::Train, idx.len());
        if self.config.augment {
            x = augment(&x, rng)?;
        }
        let xv = tape.constant(x)?;
        let logits = self.net.forward(tape, genome, xv, Mode::Train)?;
        tape.softmax_cross_entropy(logits, &labels)
    }

    fn end_step(&mut self, _applied: bool) {}

    fn draw_valid(&self, rng: &mut Rng) -> Result<Minibatch> {
        Ok(Minibatch::Images(self.data.sample_batch(Split::Valid, self.config.eval_batch, rng)?))
    }

    fn score(&self, genome: &Genome, batch: &Minibatch) -> Result<Evaluation> {
        let Minibatch::Images(idx) = batch else {
            return Err(Error::InvalidArgument("text window for an image task".into()));
        };
        let valid = self.data.range(Split::Valid);
        if idx.is_empty() || idx.iter().any(|i| !valid.contains(i)) {
            return Err(Error::InvalidArgument("reward minibatch must be non-empty validation images".into()));
        }
        let (x, labels) = self.data.gather(idx);
        self.counters.record(Split::Valid, idx.len());
        let mut tape = Tape::new();
        let xv = tape.constant(x)?;
        let y = self.net.forward(&mut tape, genome, xv, Mode::Batch)?;
        let logits = tape.value(y);
        Ok(Evaluation {
            kind: TaskKind::ImageClassification,
            loss: xent(logits, &labels)?,
            metric: accuracy(logits, &labels),
        })
    }

    fn evaluate(&self, genome: &Genome, split: Split, mode: Mode) -> Result<Evaluation> {
        let (logits, labels) = self.split_logits(genome, split, mode)?;
        Ok(Evaluation {
            kind: TaskKind::ImageClassification,
            loss: xent(&logits, &labels)?,
            metric: accuracy(&logits, &labels),
        })
    }

    fn rebuild(&self, _fixed: bool, rng: &mut Rng) -> Result<Self> {
        Self::new(self.data.clone(), self.config, rng)
    }

    fn counters(&self) -> &AccessCounters {
        &self.counters
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationResult {
    /// Validation accuracy of each sampled configuration alone.
    pub single: Vec<f64>,
    /// Accuracy of the averaged class probabilities of all samples.
    pub ensemble: f64,
}

impl AblationResult {
    pub fn single_mean(&self) -> f64 {
        self.single.iter().sum::<f64>() / self.single.len() as f64
    }
}

fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let classes = logits.shape()[1];
    for row in out.values_mut().chunks_mut(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v = (*v - max).exp());
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

/// Trains shared weights under the untrained initial policy, never
/// updating it, then evaluates an ensemble of sampled configurations.
pub fn ablation_frozen_controller(template: &ImageTask, config: &TrainConfig, ensemble_size: usize, sink: Sink<'_>) -> Result<AblationResult> {
    if ensemble_size == 0 {
        return Err(Error::InvalidArgument("ensemble needs at least one sample".into()));
    }
    let seed = config.seed;
    let mut task = template.rebuild(false, &mut child_rng(seed, "ablate/init"))?;
    let policy = PolicyState::new(task.spec(), config.controller, &mut child_rng(seed, "controller/init"))?;
    let mut opt = config.shared_optimizer()?;
    let mut rng = child_rng(seed, "ablate/shared");
    let mut step = 0;
    for epoch in 0..config.epochs {
        train_shared_phase(
            &mut task,
            &Sampler::Policy(&policy),
            &mut opt,
            &config.shared_schedule,
            &mut rng,
            SharedContext {
                epoch,
                step: &mut step,
                seed,
                sink: &mut |mut r: RunRecord| {
                    r.phase = RecordPhase::Ablate;
                    sink(r)
                },
            },
        )?;
    }
    let mut sample_rng = child_rng(seed, "ablate/ensemble");
    let mut single = Vec::with_capacity(ensemble_size);
    let mut sum: Option<Tensor> = None;
    let mut labels = Vec::new();
    for _ in 0..ensemble_size {
        let (genome, _) = policy.sample(&mut sample_rng)?;
        let (logits, l) = task.split_logits(&genome, Split::Valid, Mode::Batch)?;
        single.push(accuracy(&logits, &l));
        let probs = softmax_rows(&logits);
        sum = Some(match sum {
            None => probs,
            Some(mut s) => {
                s.values_mut().iter_mut().zip(probs.values()).for_each(|(a, b)| *a += b);
                s
            }
        });
        labels = l;
    }
    let ensemble = accuracy(&sum.expect("at least one sample"), &labels);
    let result = AblationResult { single, ensemble };
    sink(RunRecord {
        phase: RecordPhase::Ablate,
        step,
        epoch: config.epochs,
        values: vec![("single_mean", result.single_mean()), ("ensemble", ensemble), ("samples", ensemble_size as f64)],
        genome: None,
        seed,
    });
    Ok(result)
}
