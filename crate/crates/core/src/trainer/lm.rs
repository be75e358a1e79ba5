use std::sync::Arc;

use rand::Rng as _;

use super::{AccessCounters, Evaluation, Minibatch, SearchTask, TaskKind};
use crate::data::{Split, TextCorpus};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::rng::Rng;
use crate::rnn::{perplexity, DropoutMasks, DropoutRates, LmBatch, Phase, RnnConfig, RnnSupernet};
use crate::space::{Genome, SpaceSpec};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmTaskConfig {
    pub embed: usize,
    pub hidden: usize,
    pub nodes: usize,
    pub tied: bool,
    pub batch: usize,
    /// Unroll length of training windows.
    pub steps: usize,
    pub eval_batch: usize,
    pub eval_steps: usize,
    pub dropout: DropoutRates,
}

impl LmTaskConfig {
    fn net(&self, vocab: usize) -> RnnConfig {
        RnnConfig {
            vocab,
            embed: self.embed,
            hidden: self.hidden,
            nodes: self.nodes,
            tied: self.tied,
        }
    }
}

#[derive(Clone, Debug)]
struct Windows {
    train: Vec<LmBatch>,
    valid: Vec<LmBatch>,
    test: Vec<LmBatch>,
}

/// Language modelling over a token corpus with an RNN-cell supernet.
/// The hidden state is carried across the consecutive windows of a pass.
#[derive(Clone, Debug)]
pub struct LmTask {
    pub config: LmTaskConfig,
    pub net: RnnSupernet,
    corpus: Arc<TextCorpus>,
    windows: Arc<Windows>,
    state: Tensor,
    pending: Option<Tensor>,
    counters: Arc<AccessCounters>,
}

fn windows_or_empty(corpus: &TextCorpus, split: Split, batch: usize, steps: usize) -> Result<Vec<LmBatch>> {
    match corpus.windows(split, batch, steps) {
        Ok(w) => Ok(w),
        Err(Error::Empty(_)) => Ok(vec![]),
        Err(e) => Err(e),
    }
}

impl LmTask {
    pub fn new(corpus: Arc<TextCorpus>, config: LmTaskConfig, rng: &mut Rng) -> Result<Self> {
        Self::build(corpus, config, Phase::Search, rng)
    }

    fn build(corpus: Arc<TextCorpus>, config: LmTaskConfig, phase: Phase, rng: &mut Rng) -> Result<Self> {
        let windows = Windows {
            train: windows_or_empty(&corpus, Split::Train, config.batch, config.steps)?,
            valid: windows_or_empty(&corpus, Split::Valid, config.eval_batch, config.eval_steps)?,
            test: windows_or_empty(&corpus, Split::Test, config.eval_batch, config.eval_steps)?,
        };
        let net = RnnSupernet::new(config.net(corpus.vocab_size()), phase, rng)?;
        Ok(LmTask {
            state: Tensor::zeros(&[config.batch, config.hidden]),
            pending: None,
            config,
            net,
            corpus,
            windows: Arc::new(windows),
            counters: Arc::default(),
        })
    }

    pub fn corpus(&self) -> &TextCorpus {
        &self.corpus
    }

    fn split_windows(&self, split: Split) -> &[LmBatch] {
        match split {
            Split::Train => &self.windows.train,
            Split::Valid => &self.windows.valid,
            Split::Test => &self.windows.test,
        }
    }

    /// Mean token loss over `windows`, carrying state from zero.
    fn eval_windows(&self, genome: &Genome, windows: &[LmBatch], split: Split, mode: Mode) -> Result<Evaluation> {
        if windows.is_empty() {
            return Err(Error::Empty(format!("{} split has no windows", split.name())));
        }
        let mut state = Tensor::zeros(&[windows[0].batch, self.config.hidden]);
        let mut total = 0.0;
        let mut tokens = 0;
        for w in windows {
            let mut tape = Tape::new();
            let (loss, next) = self.net.forward_lm(&mut tape, genome, w, &state, &DropoutMasks::default(), mode)?;
            let n = w.targets.len();
            total += tape.value(loss).item()? * n as f64;
            tokens += n;
            self.counters.record(split, n);
            state = next;
        }
        let loss = total / tokens as f64;
        Ok(Evaluation {
            kind: TaskKind::LanguageModel,
            loss,
            metric: perplexity(loss),
        })
    }
}

impl SearchTask for LmTask {
    fn kind(&self) -> TaskKind {
        TaskKind::LanguageModel
    }

    fn spec(&self) -> SpaceSpec {
        self.net.spec()
    }

    fn store(&self) -> &ParamStore {
        &self.net.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.net.store
    }

    fn begin_epoch(&mut self, _rng: &mut Rng) -> Result<usize> {
        self.state = Tensor::zeros(&[self.config.batch, self.config.hidden]);
        self.pending = None;
        Ok(self.windows.train.len())
    }

    fn train_loss(&mut self, tape: &mut Tape, genome: &Genome, step: usize, rng: &mut Rng) -> Result<Var> {
        let w = self
            .windows
            .train
            .get(step)
            .ok_or_else(|| Error::InvalidArgument(format!("no training window {step}")))?;
        let masks = DropoutMasks::sample(self.config.dropout, w.batch, &self.net.config, rng);
        self.counters.record(Split::Train, w.targets.len());
        let (loss, next) = self.net.forward_lm(tape, genome, w, &self.state, &masks, Mode::Train)?;
        self.pending = Some(next);
        Ok(loss)
    }

    fn end_step(&mut self, applied: bool) {
        match self.pending.take() {
            Some(s) if applied => self.state = s,
            // a faulted step restarts the carried state
            _ => self.state = Tensor::zeros(&[self.config.batch, self.config.hidden]),
        }
    }

    fn draw_valid(&self, rng: &mut Rng) -> Result<Minibatch> {
        if self.windows.valid.is_empty() {
            return Err(Error::Empty("validation split has no windows".into()));
        }
        Ok(Minibatch::Window(rng.gen_range(0..self.windows.valid.len())))
    }

    fn score(&self, genome: &Genome, batch: &Minibatch) -> Result<Evaluation> {
        let Minibatch::Window(i) = batch else {
            return Err(Error::InvalidArgument("image minibatch for a language model".into()));
        };
        let w = self
            .windows
            .valid
            .get(*i)
            .ok_or_else(|| Error::InvalidArgument(format!("no validation window {i}")))?;
        self.eval_windows(genome, std::slice::from_ref(w), Split::Valid, Mode::Batch)
    }

    fn evaluate(&self, genome: &Genome, split: Split, mode: Mode) -> Result<Evaluation> {
        self.eval_windows(genome, self.split_windows(split), split, mode)
    }

    fn rebuild(&self, fixed: bool, rng: &mut Rng) -> Result<Self> {
        let phase = if fixed { Phase::Retrain } else { Phase::Search };
        let mut t = Self::build(self.corpus.clone(), self.config, phase, rng)?;
        t.windows = self.windows.clone();
        Ok(t)
    }

    fn counters(&self) -> &AccessCounters {
        &self.counters
    }

    fn carry(&self) -> Option<Tensor> {
        Some(self.state.clone())
    }

    fn set_carry(&mut self, state: Option<Tensor>) {
        if let Some(s) = state {
            self.state = s;
        }
    }
}
