//! Cooperative Dec-POMDP environments behind one stepping interface.

mod matrix;
mod predator_prey;

pub use matrix::{MatrixGame, MatrixGameConfig};
pub use predator_prey::{Action, GridState, Pos, PredatorPrey, PredatorPreyConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("expected {expected} actions, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("agent {agent}: action {action} is out of range (0..{n_actions})")]
    ActionOutOfRange {
        agent: usize,
        action: usize,
        n_actions: usize,
    },
    #[error("agent {agent}: action {action} is unavailable")]
    Unavailable { agent: usize, action: usize },
    #[error("step called on a terminated episode")]
    Terminated,
}

/// Static dimensions of an environment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnvInfo {
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub episode_limit: usize,
}

/// What every agent sees after a reset or a step. The reward is shared.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvStep {
    pub observations: Vec<Tensor>,
    pub state: Tensor,
    pub reward: f64,
    /// The episode is over (true terminal or time limit).
    pub terminated: bool,
    /// Set together with `terminated` when only the time limit ended it, so
    /// learners may still bootstrap from the final state.
    pub truncated: bool,
    pub available_actions: Vec<Vec<bool>>,
}

pub trait MultiAgentEnv: Send {
    fn info(&self) -> EnvInfo;

    /// Starts a new episode; all randomness within it derives from `seed`.
    fn reset(&mut self, seed: u64) -> EnvStep;

    fn step(&mut self, joint_action: &[usize]) -> Result<EnvStep, EnvError>;

    /// A JSON snapshot of the internal state for trace dumps.
    fn snapshot(&self) -> serde_json::Value;
}

/// Environment selection as it appears in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum EnvSpec {
    Matrix(MatrixGameConfig),
    PredatorPrey(PredatorPreyConfig),
}

impl Default for EnvSpec {
    fn default() -> Self {
        EnvSpec::PredatorPrey(PredatorPreyConfig::default())
    }
}

impl EnvSpec {
    pub const NAMES: [&'static str; 2] = ["matrix", "predator_prey"];

    pub fn build(&self) -> Result<Box<dyn MultiAgentEnv>, EnvError> {
        Ok(match self {
            EnvSpec::Matrix(c) => Box::new(MatrixGame::new(c.clone())?),
            EnvSpec::PredatorPrey(c) => Box::new(PredatorPrey::new(c.clone())?),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvSpec::Matrix(_) => "matrix",
            EnvSpec::PredatorPrey(_) => "predator_prey",
        }
    }
}

pub(crate) fn check_arity(joint_action: &[usize], n: usize) -> Result<(), EnvError> {
    if joint_action.len() != n {
        return Err(EnvError::ArityMismatch {
            expected: n,
            got: joint_action.len(),
        });
    }
    Ok(())
}
