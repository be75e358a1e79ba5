//! Alternating search: shared-weight passes, controller updates,
//! derivation, retraining from scratch and the comparison baselines.

mod image;
mod lm;

pub use image::{ablation_frozen_controller, AblationResult, ImageNet, ImageNetConfig, ImageTask, ImageTaskConfig};
pub use lm::{LmTask, LmTaskConfig};

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng as _;
use rayon::prelude::*;

use crate::controller::{reinforce_update, skip_kl_penalty, BaselineState, ControllerConfig, PolicyState};
use crate::data::Split;
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::{child_rng, Rng};
use crate::schedule::LrSchedule;
use crate::space::{sample_uniform_with_skip, Genome, SpaceKind, SpaceSpec};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    LanguageModel,
    ImageClassification,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::LanguageModel => "lm",
            TaskKind::ImageClassification => "image",
        }
    }
}

/// Loss and headline metric (perplexity or accuracy) of one evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub kind: TaskKind,
    pub loss: f64,
    pub metric: f64,
}

impl Evaluation {
    /// Larger is better for both kinds.
    pub fn score(&self) -> f64 {
        match self.kind {
            TaskKind::LanguageModel => -self.metric,
            TaskKind::ImageClassification => self.metric,
        }
    }

    pub fn metric_name(&self) -> &'static str {
        match self.kind {
            TaskKind::LanguageModel => "ppl",
            TaskKind::ImageClassification => "accuracy",
        }
    }
}

/// How a validation evaluation becomes a reward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RewardSpec {
    /// `c / ppl`.
    InversePerplexity { c: f64 },
    Accuracy,
}

impl RewardSpec {
    pub fn reward(&self, eval: &Evaluation) -> Result<f64> {
        match (self, eval.kind) {
            (RewardSpec::InversePerplexity { c }, TaskKind::LanguageModel) => Ok(c / eval.metric),
            (RewardSpec::Accuracy, TaskKind::ImageClassification) => Ok(eval.metric),
            _ => Err(Error::InvalidArgument(format!("reward {self:?} for a {} task", eval.kind.name()))),
        }
    }
}

/// Examples read per split, for auditing reward isolation.
#[derive(Debug, Default)]
pub struct AccessCounters {
    counts: [AtomicUsize; 3],
}

impl AccessCounters {
    pub fn record(&self, split: Split, examples: usize) {
        self.counts[split as usize].fetch_add(examples, Ordering::Relaxed);
    }

    pub fn get(&self, split: Split) -> usize {
        self.counts[split as usize].load(Ordering::Relaxed)
    }
}

/// A validation minibatch chosen for reward computation.
#[derive(Clone, Debug, PartialEq)]
pub enum Minibatch {
    /// Index into the task's validation windows.
    Window(usize),
    /// Image indices.
    Images(Vec<usize>),
}

/// A supernet bound to a dataset.
pub trait SearchTask: Clone + Send + Sync {
    fn kind(&self) -> TaskKind;
    fn spec(&self) -> SpaceSpec;
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    /// Plans one pass over the training split and returns its number of
    /// minibatches.
    fn begin_epoch(&mut self, rng: &mut Rng) -> Result<usize>;
    /// Training loss of `genome` on minibatch `step` of the current pass.
    fn train_loss(&mut self, tape: &mut Tape, genome: &Genome, step: usize, rng: &mut Rng) -> Result<Var>;
    /// Called after every training minibatch; `applied` is false when the
    /// step was skipped.
    fn end_step(&mut self, applied: bool);
    fn draw_valid(&self, rng: &mut Rng) -> Result<Minibatch>;
    /// Shared-weight evaluation of `genome` on one validation minibatch.
    fn score(&self, genome: &Genome, batch: &Minibatch) -> Result<Evaluation>;
    fn evaluate(&self, genome: &Genome, split: Split, mode: Mode) -> Result<Evaluation>;
    /// Same data and dimensions with fresh parameters. `fixed` selects the
    /// initialization for training a single architecture.
    fn rebuild(&self, fixed: bool, rng: &mut Rng) -> Result<Self>;
    fn counters(&self) -> &AccessCounters;
    /// State carried between minibatches (LM hidden state), for checkpoints.
    fn carry(&self) -> Option<Tensor> {
        None
    }
    fn set_carry(&mut self, _state: Option<Tensor>) {}
}

/// Where shared-phase genomes come from.
#[derive(Clone, Debug)]
pub enum Sampler<'a> {
    Policy(&'a PolicyState),
    Uniform { spec: SpaceSpec, skip_prob: f64 },
    Fixed(Genome),
    Categorical(Vec<(Genome, f64)>),
}

impl Sampler<'_> {
    pub fn draw(&self, rng: &mut Rng) -> Result<Genome> {
        match self {
            Sampler::Policy(p) => Ok(p.sample(rng)?.0),
            Sampler::Uniform { spec, skip_prob } => Ok(sample_uniform_with_skip(spec, *skip_prob, rng)),
            Sampler::Fixed(g) => Ok(g.clone()),
            Sampler::Categorical(items) => {
                let total: f64 = items.iter().map(|(_, w)| *w).sum();
                if items.is_empty() || !(total > 0.0) {
                    return Err(Error::Empty("categorical sampler without mass".into()));
                }
                let mut u = rng.gen::<f64>() * total;
                for (g, w) in items {
                    if u < *w {
                        return Ok(g.clone());
                    }
                    u -= w;
                }
                Ok(items.last().expect("non-empty").0.clone())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordPhase {
    Shared,
    Controller,
    Derive,
    Retrain,
    Random,
    Ablate,
    Eval,
}

impl RecordPhase {
    pub fn name(self) -> &'static str {
        match self {
            RecordPhase::Shared => "shared",
            RecordPhase::Controller => "controller",
            RecordPhase::Derive => "derive",
            RecordPhase::Retrain => "retrain",
            RecordPhase::Random => "random",
            RecordPhase::Ablate => "ablate",
            RecordPhase::Eval => "eval",
        }
    }
}

/// One metrics row.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub phase: RecordPhase,
    pub step: u64,
    pub epoch: usize,
    pub values: Vec<(&'static str, f64)>,
    pub genome: Option<String>,
    pub seed: u64,
}

pub type Sink<'a> = &'a mut dyn FnMut(RunRecord);

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Controller steps after each shared pass.
    pub controller_steps: usize,
    /// Rollouts per controller step.
    pub controller_batch: usize,
    pub reward: RewardSpec,
    pub entropy_weight: f64,
    /// `(rho, weight)` of the skip-density penalty (macro space only).
    pub skip_prior: Option<(f64, f64)>,
    pub baseline_decay: f64,
    pub controller: ControllerConfig,
    pub controller_optimizer: OptimizerKind,
    pub controller_lr: f64,
    pub shared_optimizer: OptimizerKind,
    pub shared_schedule: LrSchedule,
    pub shared_clip: Option<f64>,
    pub shared_weight_decay: f64,
    /// Candidates sampled by derivation.
    pub derive_samples: usize,
    pub retrain_epochs: usize,
    /// Skip probability for random-search genomes.
    pub random_skip_prob: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn language_model() -> Self {
        TrainConfig {
            epochs: 150,
            controller_steps: 2000,
            controller_batch: 1,
            reward: RewardSpec::InversePerplexity { c: 80.0 },
            entropy_weight: 1e-4,
            skip_prior: None,
            baseline_decay: 0.99,
            controller: ControllerConfig::default(),
            controller_optimizer: OptimizerKind::adam(),
            controller_lr: 3.5e-4,
            shared_optimizer: OptimizerKind::Sgd,
            shared_schedule: LrSchedule::ExponentialAfterEpoch {
                base: 20.0,
                factor: 0.96,
                start: 15,
            },
            shared_clip: Some(0.25),
            shared_weight_decay: 1e-7,
            derive_samples: 10,
            retrain_epochs: 150,
            random_skip_prob: 0.4,
            seed: 0,
        }
    }

    pub fn image() -> Self {
        TrainConfig {
            epochs: 310,
            controller_steps: 2000,
            controller_batch: 1,
            reward: RewardSpec::Accuracy,
            entropy_weight: 1e-4,
            skip_prior: Some((0.4, 0.8)),
            baseline_decay: 0.99,
            controller: ControllerConfig::default(),
            controller_optimizer: OptimizerKind::adam(),
            controller_lr: 1e-3,
            shared_optimizer: OptimizerKind::Nesterov { momentum: 0.9 },
            shared_schedule: LrSchedule::CosineRestarts {
                l_max: 0.05,
                l_min: 0.001,
                t0: 10.0,
                t_mul: 2.0,
            },
            shared_clip: None,
            shared_weight_decay: 1e-4,
            derive_samples: 10,
            retrain_epochs: 310,
            random_skip_prob: 0.4,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.shared_schedule.validate()?;
        if self.controller_batch == 0 {
            return Err(Error::InvalidArgument("controller batch must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.random_skip_prob) {
            return Err(Error::InvalidArgument(format!("skip probability {}", self.random_skip_prob)));
        }
        if let Some((rho, w)) = self.skip_prior {
            if !(rho > 0.0 && rho < 1.0) || w < 0.0 {
                return Err(Error::InvalidArgument(format!("skip prior ({rho}, {w})")));
            }
        }
        Ok(())
    }

    pub fn shared_optimizer(&self) -> Result<Optimizer> {
        Optimizer::new(self.shared_optimizer, self.shared_clip, self.shared_weight_decay)
    }

    pub fn controller_optimizer(&self) -> Result<Optimizer> {
        Optimizer::new(self.controller_optimizer, None, 0.0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhaseSummary {
    pub steps: usize,
    /// Steps skipped on numeric faults.
    pub faults: usize,
    pub mean_loss: f64,
}

/// Per-pass bookkeeping threaded through a shared phase.
pub struct SharedContext<'a> {
    pub epoch: usize,
    /// Next value of the shared-phase step counter.
    pub step: &'a mut u64,
    pub seed: u64,
    pub sink: Sink<'a>,
}

/// One pass over the training data: per minibatch, draw one genome and
/// take one optimizer step on its loss.
pub fn train_shared_phase<T: SearchTask>(
    task: &mut T,
    sampler: &Sampler<'_>,
    optimizer: &mut Optimizer,
    schedule: &LrSchedule,
    rng: &mut Rng,
    ctx: SharedContext<'_>,
) -> Result<PhaseSummary> {
    let batches = task.begin_epoch(rng)?;
    if batches == 0 {
        return Err(Error::Empty("training split yields no minibatches".into()));
    }
    let mut summary = PhaseSummary::default();
    let mut loss_sum = 0.0;
    for b in 0..batches {
        let genome = sampler.draw(rng)?;
        let lr = schedule.lr(ctx.epoch as f64 + b as f64 / batches as f64);
        let mut tape = Tape::new();
        let outcome = task.train_loss(&mut tape, &genome, b, rng).and_then(|loss| {
            let value = tape.value(loss).item()?;
            let grads = tape.backward(loss)?;
            let report = optimizer.step(task.store_mut(), &grads, lr)?;
            Ok((value, report))
        });
        let mut values = vec![("lr", lr)];
        match outcome {
            Ok((loss, report)) => {
                for u in tape.take_stat_updates() {
                    u.apply(task.store_mut());
                }
                task.end_step(true);
                summary.steps += 1;
                loss_sum += loss;
                values.push(("loss", loss));
                values.push(("grad_norm", report.grad_norm));
            }
            Err(Error::NumericFault(_)) => {
                task.end_step(false);
                summary.faults += 1;
                values.push(("fault", 1.0));
            }
            Err(e) => return Err(e),
        }
        (ctx.sink)(RunRecord {
            phase: RecordPhase::Shared,
            step: *ctx.step,
            epoch: ctx.epoch,
            values,
            genome: Some(genome.id()),
            seed: ctx.seed,
        });
        *ctx.step += 1;
    }
    summary.mean_loss = if summary.steps > 0 { loss_sum / summary.steps as f64 } else { f64::NAN };
    Ok(summary)
}

/// Controller-side settings of a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControllerSettings {
    pub reward: RewardSpec,
    pub entropy_weight: f64,
    pub skip_prior: Option<(f64, f64)>,
    pub batch: usize,
    pub lr: f64,
}

impl From<&TrainConfig> for ControllerSettings {
    fn from(c: &TrainConfig) -> Self {
        ControllerSettings {
            reward: c.reward,
            entropy_weight: c.entropy_weight,
            skip_prior: c.skip_prior,
            batch: c.controller_batch,
            lr: c.controller_lr,
        }
    }
}

/// Controller updates against frozen shared weights. The skip penalty is
/// subtracted from the reward before baselining.
#[allow(clippy::too_many_arguments)]
pub fn train_controller_phase<T: SearchTask>(
    policy: &mut PolicyState,
    baseline: &mut BaselineState,
    optimizer: &mut Optimizer,
    task: &T,
    steps: usize,
    settings: ControllerSettings,
    rng: &mut Rng,
    ctx: SharedContext<'_>,
) -> Result<PhaseSummary> {
    let mut summary = PhaseSummary::default();
    let mut loss_sum = 0.0;
    for _ in 0..steps {
        let mut traces = Vec::with_capacity(settings.batch);
        let mut rewards = Vec::with_capacity(settings.batch);
        let mut last = None;
        let mut reward_sum = 0.0;
        for _ in 0..settings.batch {
            let (genome, trace) = policy.sample(rng)?;
            let batch = task.draw_valid(rng)?;
            let eval = task.score(&genome, &batch)?;
            let mut r = settings.reward.reward(&eval)?;
            reward_sum += r;
            if let (Some((rho, w)), SpaceKind::Macro) = (settings.skip_prior, trace.space) {
                r -= w * skip_kl_penalty(&trace, rho)?;
            }
            traces.push(trace);
            rewards.push(r);
            last = Some(genome);
        }
        let mut values = Vec::new();
        match reinforce_update(policy, &traces, &rewards, baseline, settings.entropy_weight, optimizer, settings.lr) {
            Ok(d) => {
                summary.steps += 1;
                loss_sum += d.loss;
                values.extend([
                    ("reward", reward_sum / settings.batch as f64),
                    ("shaped_reward", d.mean_reward),
                    ("baseline", d.baseline),
                    ("entropy", d.mean_entropy),
                    ("loss", d.loss),
                ]);
            }
            Err(Error::NumericFault(_)) => {
                summary.faults += 1;
                values.push(("fault", 1.0));
            }
            Err(e) => return Err(e),
        }
        (ctx.sink)(RunRecord {
            phase: RecordPhase::Controller,
            step: *ctx.step,
            epoch: ctx.epoch,
            values,
            genome: last.map(|g| g.id()),
            seed: ctx.seed,
        });
        *ctx.step += 1;
    }
    summary.mean_loss = if summary.steps > 0 { loss_sum / summary.steps as f64 } else { 0.0 };
    Ok(summary)
}

/// Outcome of derivation: the chosen genome plus every candidate's reward.
#[derive(Clone, Debug, PartialEq)]
pub struct Derived {
    pub genome: Genome,
    pub candidates: Vec<(Genome, f64)>,
}

/// Samples `k` genomes, scores them all on one shared validation minibatch
/// and returns the best (first on ties). Scoring runs in parallel.
pub fn derive_architecture<T: SearchTask>(
    policy: &PolicyState,
    task: &T,
    k: usize,
    reward: RewardSpec,
    rng: &mut Rng,
) -> Result<Derived> {
    if k == 0 {
        return Err(Error::InvalidArgument("derivation needs at least one sample".into()));
    }
    let genomes: Vec<Genome> = (0..k).map(|_| policy.sample(rng).map(|s| s.0)).collect::<Result<_>>()?;
    if k == 1 {
        let g = genomes.into_iter().next().expect("one sample");
        return Ok(Derived {
            genome: g.clone(),
            candidates: vec![(g, f64::NAN)],
        });
    }
    let batch = task.draw_valid(rng)?;
    let rewards: Vec<f64> = genomes
        .par_iter()
        .map(|g| task.score(g, &batch).and_then(|e| reward.reward(&e)))
        .collect::<Result<_>>()?;
    Ok(pick_best(genomes.into_iter().zip(rewards).collect()))
}

fn pick_best(candidates: Vec<(Genome, f64)>) -> Derived {
    let mut best = 0;
    for (i, (_, r)) in candidates.iter().enumerate() {
        if *r > candidates[best].1 {
            best = i;
        }
    }
    Derived {
        genome: candidates[best].0.clone(),
        candidates,
    }
}

/// Final numbers of a from-scratch training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrainResult {
    pub genome: Genome,
    pub valid: Evaluation,
    pub test: Option<Evaluation>,
    pub faults: usize,
}

/// Trains `genome` alone on fresh parameters and evaluates it with
/// running statistics.
pub fn retrain_fixed<T: SearchTask>(genome: &Genome, template: &T, config: &TrainConfig, seed: u64, sink: Sink<'_>) -> Result<RetrainResult> {
    genome.validate(&template.spec())?;
    let mut init = child_rng(seed, "retrain/init");
    let mut rng = child_rng(seed, "retrain/data");
    let mut task = template.rebuild(true, &mut init)?;
    let mut opt = config.shared_optimizer()?;
    let sampler = Sampler::Fixed(genome.clone());
    let mut step = 0;
    let mut faults = 0;
    let mut rows = Vec::new();
    for epoch in 0..config.retrain_epochs {
        let s = train_shared_phase(
            &mut task,
            &sampler,
            &mut opt,
            &config.shared_schedule,
            &mut rng,
            SharedContext {
                epoch,
                step: &mut step,
                seed,
                sink: &mut |r| rows.push(r),
            },
        )?;
        faults += s.faults;
    }
    for mut r in rows {
        r.phase = RecordPhase::Retrain;
        sink(r);
    }
    let valid = task.evaluate(genome, Split::Valid, Mode::Eval)?;
    let test = match task.evaluate(genome, Split::Test, Mode::Eval) {
        Ok(e) => Some(e),
        Err(Error::Empty(_)) => None,
        Err(e) => return Err(e),
    };
    sink(RunRecord {
        phase: RecordPhase::Eval,
        step: 0,
        epoch: config.retrain_epochs,
        values: vec![("valid_loss", valid.loss), (valid.metric_name(), valid.metric)],
        genome: Some(genome.id()),
        seed,
    });
    Ok(RetrainResult {
        genome: genome.clone(),
        valid,
        test,
        faults,
    })
}

/// `trials` uniformly sampled genomes, each retrained with `config`.
/// Trials run in parallel and come back in trial order.
pub fn random_search_baseline<T: SearchTask>(template: &T, config: &TrainConfig, trials: usize, seed: u64) -> Result<Vec<RetrainResult>> {
    if trials == 0 {
        return Err(Error::InvalidArgument("random search needs at least one trial".into()));
    }
    let spec = template.spec();
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = child_rng(seed, &format!("random/{i}"));
            let genome = sample_uniform_with_skip(&spec, config.random_skip_prob, &mut rng);
            retrain_fixed(&genome, template, config, rng.gen(), &mut |_| {})
        })
        .collect()
}

/// Everything a search needs to continue from an epoch boundary.
#[derive(Clone, Debug)]
pub struct Search<T: SearchTask> {
    pub config: TrainConfig,
    pub task: T,
    pub policy: PolicyState,
    pub baseline: BaselineState,
    pub shared_opt: Optimizer,
    pub controller_opt: Optimizer,
    pub shared_rng: Rng,
    pub controller_rng: Rng,
    pub derive_rng: Rng,
    /// Completed epochs.
    pub epoch: usize,
    pub shared_step: u64,
    pub controller_step: u64,
}

impl<T: SearchTask> Search<T> {
    pub fn new(config: TrainConfig, task: T) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let policy = PolicyState::new(task.spec(), config.controller, &mut child_rng(seed, "controller/init"))?;
        Ok(Search {
            baseline: BaselineState::new(config.baseline_decay)?,
            shared_opt: config.shared_optimizer()?,
            controller_opt: config.controller_optimizer()?,
            shared_rng: child_rng(seed, "shared"),
            controller_rng: child_rng(seed, "controller"),
            derive_rng: child_rng(seed, "derive"),
            epoch: 0,
            shared_step: 0,
            controller_step: 0,
            config,
            task,
            policy,
        })
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    /// One shared pass followed by the controller steps.
    pub fn run_epoch(&mut self, sink: Sink<'_>) -> Result<(PhaseSummary, PhaseSummary)> {
        let seed = self.config.seed;
        let shared = train_shared_phase(
            &mut self.task,
            &Sampler::Policy(&self.policy),
            &mut self.shared_opt,
            &self.config.shared_schedule,
            &mut self.shared_rng,
            SharedContext {
                epoch: self.epoch,
                step: &mut self.shared_step,
                seed,
                sink: &mut *sink,
            },
        )?;
        let controller = train_controller_phase(
            &mut self.policy,
            &mut self.baseline,
            &mut self.controller_opt,
            &self.task,
            self.config.controller_steps,
            ControllerSettings::from(&self.config),
            &mut self.controller_rng,
            SharedContext {
                epoch: self.epoch,
                step: &mut self.controller_step,
                seed,
                sink,
            },
        )?;
        self.epoch += 1;
        Ok((shared, controller))
    }

    pub fn run(&mut self, sink: Sink<'_>) -> Result<()> {
        while !self.finished() {
            self.run_epoch(sink)?;
        }
        Ok(())
    }

    pub fn derive(&mut self, sink: Sink<'_>) -> Result<Derived> {
        let d = derive_architecture(&self.policy, &self.task, self.config.derive_samples, self.config.reward, &mut self.derive_rng)?;
        for (i, (g, r)) in d.candidates.iter().enumerate() {
            sink(RunRecord {
                phase: RecordPhase::Derive,
                step: i as u64,
                epoch: self.epoch,
                values: vec![("reward", *r)],
                genome: Some(g.id()),
                seed: self.config.seed,
            });
        }
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lm_reward_at_c() {
        let e = Evaluation {
            kind: TaskKind::LanguageModel,
            loss: 80f64.ln(),
            metric: 80.0,
        };
        assert_eq!(RewardSpec::InversePerplexity { c: 80.0 }.reward(&e).unwrap(), 1.0);
        assert!(RewardSpec::Accuracy.reward(&e).is_err());
    }

    #[test]
    fn best_candidate_first_on_ties() {
        let spec = SpaceSpec::rnn(1).unwrap();
        let g: Vec<Genome> = (0..3).map(|a| Genome::from_decisions(&spec, &[a]).unwrap()).collect();
        let d = pick_best(vec![(g[0].clone(), 0.2), (g[1].clone(), 0.7), (g[2].clone(), 0.4)]);
        assert_eq!(d.genome, g[1]);
        let d = pick_best(vec![(g[0].clone(), 0.5), (g[1].clone(), 0.5)]);
        assert_eq!(d.genome, g[0]);
    }

    #[test]
    fn categorical_sampler_frequencies() {
        let spec = SpaceSpec::rnn(1).unwrap();
        let a = Genome::from_decisions(&spec, &[0]).unwrap();
        let b = Genome::from_decisions(&spec, &[1]).unwrap();
        let s = Sampler::Categorical(vec![(a.clone(), 1.0), (b, 3.0)]);
        let mut rng = child_rng(0, "t");
        let hits = (0..20_000).filter(|_| s.draw(&mut rng).unwrap() == a).count();
        assert!((hits as f64 / 20_000.0 - 0.25).abs() < 0.01);
    }
}
