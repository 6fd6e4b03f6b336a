//! Episode collection, replay, TD(λ) targets through the unrestricted
//! critic, the weighted projection loss and the outer training loop.

mod buffer;
mod learner;
mod rollout;
mod run;
mod targets;

pub use buffer::{Episode, ReplayBuffer};
pub use learner::{Learner, StepStats};
pub use rollout::{collect_episode, evaluate, ActionSelector};
pub use run::{MetricsRow, RunOutcome, RunSummary, Runner, METRICS_HEADER};
pub use targets::lambda_returns;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvError;
use crate::factor::FactorError;
use crate::tensor::TensorError;
use crate::weighting::WeightError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot resume: {0}")]
    Resume(String),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Episodes per training batch.
    pub batch_size: usize,
    /// Replay capacity in episodes.
    pub buffer_episodes: usize,
    pub lr: f64,
    /// Target networks are re-synced every this many completed episodes.
    pub target_interval: usize,
    pub td_lambda: f64,
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_anneal_steps: u64,
    /// Environment steps between greedy evaluations.
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Environment steps to train for.
    pub total_steps: u64,
    pub grad_clip: f64,
    /// Keep the replay buffer in the final snapshot so the run can resume.
    pub save_replay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            buffer_episodes: 10_000,
            lr: 1e-3,
            target_interval: 200,
            td_lambda: 0.6,
            gamma: 0.99,
            eps_start: 0.995,
            eps_end: 0.05,
            eps_anneal_steps: 100_000,
            eval_interval: 1000,
            eval_episodes: 32,
            total_steps: 200_000,
            grad_clip: 10.0,
            save_replay: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 || self.buffer_episodes < self.batch_size {
            return bad("need 0 < batch_size <= buffer_episodes");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.target_interval == 0 {
            return bad("target_interval must be positive");
        }
        if !(0.0..=1.0).contains(&self.td_lambda) || !(0.0..=1.0).contains(&self.gamma) {
            return bad("td_lambda and gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_end) {
            return bad("epsilon endpoints must lie in [0, 1]");
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return bad("eval_interval and eval_episodes must be positive");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive");
        }
        Ok(())
    }

    /// Linear anneal from `eps_start` to `eps_end` over `eps_anneal_steps`
    /// environment steps, constant afterwards.
    pub fn epsilon(&self, env_steps: u64) -> f64 {
        if self.eps_anneal_steps == 0 || env_steps >= self.eps_anneal_steps {
            return self.eps_end;
        }
        let frac = env_steps as f64 / self.eps_anneal_steps as f64;
        self.eps_start + (self.eps_end - self.eps_start) * frac
    }
}
