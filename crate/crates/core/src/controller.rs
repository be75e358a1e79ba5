//! Autoregressive LSTM policy over genome decisions and its REINFORCE
//! update.

use rand::Rng;

use crate::error::{Error, Result};
use crate::optim::Optimizer;
use crate::space::{DecisionKind, Genome, SpaceKind, SpaceSpec};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControllerConfig {
    pub hidden: usize,
    pub temperature: f64,
    /// `None` disables the tanh squashing of logits.
    pub tanh_constant: Option<f64>,
    pub init_range: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            hidden: 100,
            temperature: 5.0,
            tanh_constant: Some(2.5),
            init_range: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Head {
    kind: DecisionKind,
    weight: ParamId,
    embedding: ParamId,
}

/// Controller parameters θ plus the sampling configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyState {
    pub spec: SpaceSpec,
    pub config: ControllerConfig,
    pub store: ParamStore,
    lstm: ParamId,
    start: ParamId,
    heads: Vec<Head>,
}

/// One rollout's decisions and their statistics under the policy that
/// produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleTrace {
    pub space: SpaceKind,
    pub decisions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub entropies: Vec<f64>,
    /// Full per-step distributions after the logit transform.
    pub probs: Vec<Vec<f64>>,
    /// Probability of "present" for each skip decision, in order.
    pub skip_probs: Vec<f64>,
}

/// Moving-average reward baseline. Starts unset and takes the first
/// batch mean, so a constant reward never produces an advantage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineState {
    pub value: Option<f64>,
    pub decay: f64,
}

impl Default for BaselineState {
    fn default() -> Self {
        BaselineState {
            value: None,
            decay: 0.99,
        }
    }
}

impl BaselineState {
    pub fn new(decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::InvalidArgument(format!("baseline decay {decay} outside [0, 1)")));
        }
        Ok(BaselineState { value: None, decay })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateDiagnostics {
    pub loss: f64,
    pub mean_reward: f64,
    /// Baseline used for this update's advantages.
    pub baseline: f64,
    pub mean_entropy: f64,
}

struct Rollout {
    decisions: Vec<usize>,
    log_probs: Vec<Var>,
    entropies: Vec<Var>,
    probs: Vec<Vec<f64>>,
}

fn uniform_tensor<R: Rng + ?Sized>(shape: &[usize], range: f64, rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-range..=range))
}

impl PolicyState {
    pub fn new<R: Rng + ?Sized>(spec: SpaceSpec, config: ControllerConfig, rng: &mut R) -> Result<Self> {
        if config.hidden == 0 {
            return Err(Error::InvalidArgument("controller hidden size must be positive".into()));
        }
        if !(config.temperature > 0.0) {
            return Err(Error::InvalidArgument("controller temperature must be positive".into()));
        }
        let h = config.hidden;
        let r = config.init_range;
        let mut store = ParamStore::new();
        let lstm = store.add("controller/lstm", uniform_tensor(&[2 * h, 4 * h], r, rng));
        let start = store.add("controller/start", uniform_tensor(&[1, h], r, rng));
        let mut heads = Vec::new();
        for kind in spec.decision_kinds() {
            let v = spec.vocab_size(kind);
            let name = format!("{kind:?}").to_lowercase();
            let weight = store.add(format!("controller/head/{name}"), uniform_tensor(&[h, v], r, rng));
            let embedding = store.add(format!("controller/embed/{name}"), uniform_tensor(&[v, h], r, rng));
            heads.push(Head { kind, weight, embedding });
        }
        Ok(PolicyState {
            spec,
            config,
            store,
            lstm,
            start,
            heads,
        })
    }

    fn head(&self, kind: DecisionKind) -> Result<&Head> {
        self.heads
            .iter()
            .find(|h| h.kind == kind)
            .ok_or_else(|| Error::SpecMismatch(format!("policy has no head for {kind:?} decisions")))
    }

    /// Ids of every head's output weight, keyed by decision kind.
    pub fn head_weight(&self, kind: DecisionKind) -> Option<ParamId> {
        self.heads.iter().find(|h| h.kind == kind).map(|h| h.weight)
    }

    fn lstm_step(&self, tape: &mut Tape, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hid = self.config.hidden;
        let w = tape.param(&self.store, self.lstm)?;
        let xh = tape.concat(&[x, h], 1)?;
        let gates = tape.matmul(xh, w)?;
        let i = tape.narrow(gates, 1, 0, hid)?;
        let f = tape.narrow(gates, 1, hid, hid)?;
        let g = tape.narrow(gates, 1, 2 * hid, hid)?;
        let o = tape.narrow(gates, 1, 3 * hid, hid)?;
        let (i, f, o) = (tape.sigmoid(i)?, tape.sigmoid(f)?, tape.sigmoid(o)?);
        let g = tape.tanh(g)?;
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c2 = tape.add(fc, ig)?;
        let tc = tape.tanh(c2)?;
        let h2 = tape.mul(o, tc)?;
        Ok((h2, c2))
    }

    /// Applies the temperature and tanh squashing to raw logits.
    pub fn transform_logits(&self, tape: &mut Tape, raw: Var) -> Result<Var> {
        let scaled = tape.scale(raw, 1.0 / self.config.temperature)?;
        match self.config.tanh_constant {
            Some(c) => {
                let t = tape.tanh(scaled)?;
                tape.scale(t, c)
            }
            None => Ok(scaled),
        }
    }

    fn rollout<R: Rng + ?Sized>(&self, tape: &mut Tape, forced: Option<&[usize]>, mut rng: Option<&mut R>) -> Result<Rollout> {
        let layout = self.spec.decisions();
        if let Some(f) = forced {
            if f.len() != layout.len() {
                return Err(Error::SpecMismatch(format!(
                    "{} forced decisions for a space with {}",
                    f.len(),
                    layout.len()
                )));
            }
        }
        let hid = self.config.hidden;
        let mut x = tape.param(&self.store, self.start)?;
        let mut h = tape.constant(Tensor::zeros(&[1, hid]))?;
        let mut c = tape.constant(Tensor::zeros(&[1, hid]))?;
        let mut out = Rollout {
            decisions: Vec::with_capacity(layout.len()),
            log_probs: Vec::with_capacity(layout.len()),
            entropies: Vec::with_capacity(layout.len()),
            probs: Vec::with_capacity(layout.len()),
        };
        for (step, dec) in layout.iter().enumerate() {
            let (h2, c2) = self.lstm_step(tape, x, h, c)?;
            h = h2;
            c = c2;
            let head = self.head(dec.kind)?;
            let w = tape.param(&self.store, head.weight)?;
            let mut raw = tape.matmul(h, w)?;
            if dec.choices < self.spec.vocab_size(dec.kind) {
                raw = tape.narrow(raw, 1, 0, dec.choices)?;
            }
            let logits = self.transform_logits(tape, raw)?;
            let logp = tape.log_softmax(logits)?;
            let probs: Vec<f64> = tape.value(logp).values().iter().map(|v| v.exp()).collect();
            let choice = match (forced, rng.as_deref_mut()) {
                (Some(f), _) => {
                    if f[step] >= dec.choices {
                        return Err(Error::Range {
                            decision: step,
                            message: format!("value {} with only {} choices", f[step], dec.choices),
                        });
                    }
                    f[step]
                }
                (None, Some(r)) => sample_categorical(&probs, r),
                (None, None) => return Err(Error::InvalidArgument("rollout needs decisions or an rng".into())),
            };
            let lp = tape.pick(logp, &[choice])?;
            let p = tape.exp(logp)?;
            let plogp = tape.mul(p, logp)?;
            let s = tape.sum(plogp)?;
            let ent = tape.scale(s, -1.0)?;
            out.decisions.push(choice);
            out.log_probs.push(lp);
            out.entropies.push(ent);
            out.probs.push(probs);
            let emb = tape.param(&self.store, head.embedding)?;
            x = tape.embedding(emb, &[choice])?;
        }
        Ok(out)
    }

    fn trace_of(&self, tape: &Tape, r: Rollout) -> SampleTrace {
        let layout = self.spec.decisions();
        let skip_probs = layout
            .iter()
            .zip(&r.probs)
            .filter(|(d, _)| d.kind == DecisionKind::Skip)
            .map(|(_, p)| p[1])
            .collect();
        SampleTrace {
            space: self.spec.kind(),
            decisions: r.decisions,
            log_probs: r.log_probs.iter().map(|v| tape.value(*v).values()[0]).collect(),
            entropies: r.entropies.iter().map(|v| tape.value(*v).values()[0].max(0.0)).collect(),
            probs: r.probs,
            skip_probs,
        }
    }

    /// Samples one genome autoregressively.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Genome, SampleTrace)> {
        let mut tape = Tape::new();
        let r = self.rollout(&mut tape, None, Some(rng))?;
        let trace = self.trace_of(&tape, r);
        let genome = Genome::from_decisions(&self.spec, &trace.decisions)?;
        Ok((genome, trace))
    }

    /// Statistics of a given decision sequence under the current policy.
    pub fn evaluate(&self, decisions: &[usize]) -> Result<SampleTrace> {
        let mut tape = Tape::new();
        let r = self.rollout::<rand_chacha::ChaCha8Rng>(&mut tape, Some(decisions), None)?;
        Ok(self.trace_of(&tape, r))
    }

    /// Probability of `genome` under the current policy.
    pub fn probability(&self, genome: &Genome) -> Result<f64> {
        genome.validate(&self.spec)?;
        let t = self.evaluate(&genome.to_decisions())?;
        Ok(t.log_probs.iter().sum::<f64>().exp())
    }
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Sum of per-step entropies.
pub fn entropy_bonus(trace: &SampleTrace) -> f64 {
    trace.entropies.iter().sum()
}

fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let term = |a: f64, b: f64| if a <= 0.0 { 0.0 } else { a * (a / b).ln() };
    term(p, q) + term(1.0 - p, 1.0 - q)
}

/// Mean over skip edges of `KL(Bernoulli(p_edge) || Bernoulli(rho))`.
pub fn skip_kl_penalty(trace: &SampleTrace, rho: f64) -> Result<f64> {
    if trace.space != SpaceKind::Macro {
        return Err(Error::InvalidArgument("skip penalty applies to macro traces only".into()));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument(format!("skip prior {rho} outside (0, 1)")));
    }
    if trace.skip_probs.is_empty() {
        return Ok(0.0);
    }
    Ok(trace.skip_probs.iter().map(|p| bernoulli_kl(*p, rho)).sum::<f64>() / trace.skip_probs.len() as f64)
}

/// One REINFORCE step on
/// `-(1/B) * sum_b [(R_b - baseline) * sum_t log pi + w * sum_t H]`,
/// followed by the baseline update.
pub fn reinforce_update(
    policy: &mut PolicyState,
    traces: &[SampleTrace],
    rewards: &[f64],
    baseline: &mut BaselineState,
    entropy_weight: f64,
    optimizer: &mut Optimizer,
    lr: f64,
) -> Result<UpdateDiagnostics> {
    if traces.is_empty() {
        return Err(Error::Empty("reinforce_update with no rollouts".into()));
    }
    if traces.len() != rewards.len() {
        return Err(Error::InvalidArgument(format!(
            "{} rollouts but {} rewards",
            traces.len(),
            rewards.len()
        )));
    }
    if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(Error::NumericFault(format!("reward {r}")));
    }
    let mean_reward = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let b = baseline.value.unwrap_or(mean_reward);
    let n = traces.len() as f64;

    let mut tape = Tape::new();
    let mut terms = Vec::with_capacity(traces.len());
    let mut entropy_total = 0.0;
    for (trace, reward) in traces.iter().zip(rewards) {
        let r = policy.rollout::<rand_chacha::ChaCha8Rng>(&mut tape, Some(&trace.decisions), None)?;
        // log-probs are [1]-shaped picks
        let lp = tape.concat(&r.log_probs, 0)?;
        let ents: Vec<Var> = r.entropies.iter().map(|v| tape.reshape(*v, &[1])).collect::<Result<_>>()?;
        let ent = tape.concat(&ents, 0)?;
        let sum_lp = tape.sum(lp)?;
        let sum_ent = tape.sum(ent)?;
        entropy_total += tape.value(sum_ent).values()[0];
        let pg = tape.scale(sum_lp, -(reward - b) / n)?;
        let eb = tape.scale(sum_ent, -entropy_weight / n)?;
        terms.push(tape.add(pg, eb)?);
    }
    let mut loss = terms[0];
    for t in &terms[1..] {
        loss = tape.add(loss, *t)?;
    }
    let loss_value = tape.value(loss).values()[0];
    let grads = tape.backward(loss)?;
    if grads.global_norm() > 0.0 {
        optimizer.step(&mut policy.store, &grads, lr)?;
    }
    baseline.value = Some(baseline.decay * b + (1.0 - baseline.decay) * mean_reward);
    Ok(UpdateDiagnostics {
        loss: loss_value,
        mean_reward,
        baseline: b,
        mean_entropy: entropy_total / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::OptimizerKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn policy(spec: SpaceSpec, seed: u64) -> PolicyState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PolicyState::new(spec, ControllerConfig::default(), &mut rng).unwrap()
    }

    #[test]
    fn logit_transform_example() {
        let p = policy(SpaceSpec::rnn(1).unwrap(), 0);
        let mut tape = Tape::new();
        let raw = tape.constant(Tensor::new(vec![1, 2], vec![10.0, 0.0]).unwrap()).unwrap();
        let t = p.transform_logits(&mut tape, raw).unwrap();
        let v = tape.value(t).values();
        assert!((v[0] - 2.5 * 2f64.tanh()).abs() < 1e-12);
        assert!((v[0] - 2.410_07).abs() < 1e-5);
        assert_eq!(v[1], 0.0);
    }

    #[test]
    fn trace_shapes_and_signs() {
        let p = policy(SpaceSpec::macro_cnn(4).unwrap(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (g, t) = p.sample(&mut rng).unwrap();
        let n = p.spec.decisions().len();
        assert_eq!(t.decisions.len(), n);
        assert_eq!(t.log_probs.len(), n);
        assert_eq!(t.skip_probs.len(), 6);
        assert!(t.log_probs.iter().all(|l| *l <= 0.0));
        assert!(t.entropies.iter().all(|e| *e >= 0.0));
        for probs in &t.probs {
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(g.to_decisions(), t.decisions);
        let replay = p.evaluate(&t.decisions).unwrap();
        assert_eq!(replay.log_probs, t.log_probs);
    }

    #[test]
    fn kl_examples() {
        let mut t = SampleTrace {
            space: SpaceKind::Macro,
            decisions: vec![],
            log_probs: vec![],
            entropies: vec![],
            probs: vec![],
            skip_probs: vec![0.4, 0.4],
        };
        assert_eq!(skip_kl_penalty(&t, 0.4).unwrap(), 0.0);
        t.skip_probs = vec![0.5];
        assert!((skip_kl_penalty(&t, 0.4).unwrap() - 0.020411).abs() < 1e-6);
        t.skip_probs = vec![1.0];
        assert!((skip_kl_penalty(&t, 0.4).unwrap() - (1.0f64 / 0.4).ln()).abs() < 1e-12);
        t.space = SpaceKind::Rnn;
        assert!(skip_kl_penalty(&t, 0.4).is_err());
    }

    #[test]
    fn constant_reward_does_not_move_policy() {
        let mut p = policy(SpaceSpec::rnn(2).unwrap(), 3);
        let before = p.store.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut base = BaselineState::default();
        let mut opt = Optimizer::new(OptimizerKind::adam(), None, 0.0).unwrap();
        for _ in 0..20 {
            let (_, t) = p.sample(&mut rng).unwrap();
            reinforce_update(&mut p, &[t], &[0.7], &mut base, 0.0, &mut opt, 3.5e-4).unwrap();
        }
        assert_eq!(p.store, before);
    }

    #[test]
    fn update_rejects_bad_batches() {
        let mut p = policy(SpaceSpec::rnn(1).unwrap(), 5);
        let mut base = BaselineState::default();
        let mut opt = Optimizer::new(OptimizerKind::adam(), None, 0.0).unwrap();
        assert!(reinforce_update(&mut p, &[], &[], &mut base, 0.0, &mut opt, 1e-3).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, t) = p.sample(&mut rng).unwrap();
        assert!(reinforce_update(&mut p, &[t], &[f64::NAN], &mut base, 0.0, &mut opt, 1e-3).is_err());
    }
}
