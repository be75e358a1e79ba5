//! Controller convergence on a planted-reward bandit.

use enas_core::controller::{reinforce_update, BaselineState, ControllerConfig, PolicyState};
use enas_core::data::PlantedTask;
use enas_core::optim::{Optimizer, OptimizerKind};
use enas_core::rng::child_rng;
use enas_core::space::SpaceSpec;
use enas_core::Result;

pub const LR: f64 = 3.5e-4;
pub const ENTROPY_WEIGHT: f64 = 1e-4;
pub const TARGET: f64 = 0.9;

#[derive(Debug)]
pub struct BanditRun {
    /// First step after which the planted choice has probability > TARGET.
    pub reached: Option<usize>,
    pub final_prob: f64,
}

/// Planted reward on the activation of an rnn N=1 cell; one rollout per step.
pub fn run(seed: u64, max_steps: usize) -> Result<BanditRun> {
    let spec = SpaceSpec::rnn(1)?;
    let task = PlantedTask::new(spec, 0, 2, 1.0, 0.0)?;
    let mut init = child_rng(seed, "bandit/init");
    let mut rng = child_rng(seed, "bandit/sample");
    let mut policy = PolicyState::new(spec, ControllerConfig::default(), &mut init)?;
    let mut baseline = BaselineState::new(0.99)?;
    let mut opt = Optimizer::new(OptimizerKind::adam(), None, 0.0)?;
    let prob = |p: &PolicyState| -> Result<f64> { Ok(p.evaluate(&[task.best])?.probs[0][task.best]) };
    for step in 1..=max_steps {
        let (g, trace) = policy.sample(&mut rng)?;
        let r = task.reward(&g)?;
        reinforce_update(&mut policy, &[trace], &[r], &mut baseline, ENTROPY_WEIGHT, &mut opt, LR)?;
        let p = prob(&policy)?;
        if p > TARGET {
            return Ok(BanditRun {
                reached: Some(step),
                final_prob: p,
            });
        }
    }
    Ok(BanditRun {
        reached: None,
        final_prob: prob(&policy)?,
    })
}
