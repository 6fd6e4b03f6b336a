//! Per-agent utility networks, the state-conditioned monotonic mixer, the
//! unrestricted joint critic, and action selection over masked utilities.

mod agent;
mod critic;
mod linear;
mod mixer;

pub use agent::AgentNet;
pub use critic::Critic;
pub use linear::Linear;
pub use mixer::{mixing_gradient_rows, MixOutput, Mixer, MixingParams};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{ParamStore, TensorError};

#[derive(Debug, Error)]
pub enum FactorError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("agent {agent} has no available action")]
    AllMasked { agent: usize },
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
}

pub type Result<T, E = FactorError> = std::result::Result<T, E>;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FactorConfig {
    pub agent_hidden: usize,
    /// Adds a gated recurrent cell between the two agent layers.
    pub recurrent: bool,
    pub mixer_width: usize,
    pub hyper_b2_hidden: usize,
    pub critic_hidden: usize,
}

impl Default for FactorConfig {
    fn default() -> Self {
        Self {
            agent_hidden: 64,
            recurrent: false,
            mixer_width: 32,
            hyper_b2_hidden: 32,
            critic_hidden: 64,
        }
    }
}

/// Problem dimensions the networks are built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
}

impl Dims {
    /// Observation, one-hot last action, one-hot agent id.
    pub fn agent_input_dim(&self) -> usize {
        self.obs_dim + self.n_actions + self.n_agents
    }

    /// Appends one agent-input row to `out`.
    pub fn push_agent_input(&self, obs: &[f64], last_action: Option<usize>, agent: usize, out: &mut Vec<f64>) {
        out.extend_from_slice(obs);
        let start = out.len();
        out.resize(start + self.n_actions + self.n_agents, 0.0);
        if let Some(a) = last_action {
            out[start + a] = 1.0;
        }
        out[start + self.n_actions + agent] = 1.0;
    }
}

/// The full learner architecture: shared agent network plus mixer (the
/// factored `Q_tot`) and the unrestricted critic.
#[derive(Clone, Debug)]
pub struct Networks {
    pub dims: Dims,
    pub config: FactorConfig,
    pub agent: AgentNet,
    pub mixer: Mixer,
    pub critic: Critic,
}

impl Networks {
    pub fn new(dims: Dims, config: FactorConfig) -> Self {
        let agent = AgentNet::new(
            "agent",
            dims.agent_input_dim(),
            config.agent_hidden,
            dims.n_actions,
            config.recurrent,
        );
        let mixer = Mixer::new(
            dims.n_agents,
            dims.state_dim,
            config.mixer_width,
            config.hyper_b2_hidden,
        );
        let critic = Critic::new(dims, &config);
        Self {
            dims,
            config,
            agent,
            mixer,
            critic,
        }
    }

    /// Fresh parameters for the factored value (agent network + hypernetworks).
    pub fn init_factored<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore {
        let mut store = ParamStore::new();
        self.agent.init(&mut store, rng);
        self.mixer.init(&mut store, rng);
        store
    }

    pub fn init_critic<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore {
        let mut store = ParamStore::new();
        self.critic.init(&mut store, rng);
        store
    }
}

/// Checkpoint component for a parameter name.
pub fn component_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// Per-agent argmax over available actions, ties to the lowest index.
/// `utilities` is `n_agents × n_actions` row-major.
pub fn greedy_joint_action(utilities: &[f64], masks: &[Vec<bool>]) -> Result<Vec<usize>> {
    let n = masks.len();
    let k = utilities.len() / n.max(1);
    if k * n != utilities.len() {
        return Err(FactorError::Length {
            expected: n * k,
            got: utilities.len(),
        });
    }
    masks
        .iter()
        .enumerate()
        .map(|(agent, mask)| {
            let row = &utilities[agent * k..(agent + 1) * k];
            let mut best: Option<usize> = None;
            for (a, (&q, &ok)) in row.iter().zip(mask).enumerate() {
                if ok && best.is_none_or(|b| q > row[b]) {
                    best = Some(a);
                }
            }
            best.ok_or(FactorError::AllMasked { agent })
        })
        .collect()
}

/// Masked softmax at temperature 1 for each agent; masked entries get 0.
pub fn boltzmann_policies(utilities: &[f64], masks: &[Vec<bool>]) -> Result<Vec<Vec<f64>>> {
    let n = masks.len();
    let k = utilities.len() / n.max(1);
    if k * n != utilities.len() {
        return Err(FactorError::Length {
            expected: n * k,
            got: utilities.len(),
        });
    }
    masks
        .iter()
        .enumerate()
        .map(|(agent, mask)| {
            let row = &utilities[agent * k..(agent + 1) * k];
            let max = row
                .iter()
                .zip(mask)
                .filter(|(_, &ok)| ok)
                .map(|(&q, _)| q)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(FactorError::AllMasked { agent });
            }
            let mut p: Vec<f64> = row
                .iter()
                .zip(mask)
                .map(|(&q, &ok)| if ok { (q - max).exp() } else { 0.0 })
                .collect();
            let z: f64 = p.iter().sum();
            p.iter_mut().for_each(|x| *x /= z);
            Ok(p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_examples() {
        let all = vec![vec![true; 3]];
        assert_eq!(greedy_joint_action(&[1.0, 5.0, 2.0], &all).unwrap(), vec![1]);
        assert_eq!(greedy_joint_action(&[4.0, 4.0, 2.0], &all).unwrap(), vec![0]);
        let only = vec![vec![false, false, true]];
        assert_eq!(greedy_joint_action(&[9.0, 9.0, -3.0], &only).unwrap(), vec![2]);
        let two = vec![vec![true, true], vec![false, true]];
        assert_eq!(greedy_joint_action(&[0.0, 1.0, 7.0, -1.0], &two).unwrap(), vec![1, 1]);
    }

    #[test]
    fn boltzmann_examples() {
        let p = boltzmann_policies(&[0.0, 3f64.ln()], &[vec![true, true]]).unwrap();
        assert!((p[0][0] - 0.25).abs() < 1e-15 && (p[0][1] - 0.75).abs() < 1e-15);

        let p = boltzmann_policies(&[2.0; 4], &[vec![true; 4]]).unwrap();
        assert!(p[0].iter().all(|&x| (x - 0.25).abs() < 1e-15));

        let p = boltzmann_policies(&[0.0, 100.0, 0.0], &[vec![true, false, true]]).unwrap();
        assert_eq!(p[0], vec![0.5, 0.0, 0.5]);

        assert!(matches!(
            boltzmann_policies(&[1.0, 2.0], &[vec![false, false]]),
            Err(FactorError::AllMasked { agent: 0 })
        ));
    }

    #[test]
    fn agent_input_layout() {
        let d = Dims {
            n_agents: 3,
            n_actions: 2,
            obs_dim: 2,
            state_dim: 1,
        };
        let mut row = Vec::new();
        d.push_agent_input(&[0.5, 0.25], Some(1), 2, &mut row);
        assert_eq!(row, vec![0.5, 0.25, 0.0, 1.0, 0.0, 0.0, 1.0]);
        row.clear();
        d.push_agent_input(&[0.0, 0.0], None, 0, &mut row);
        assert_eq!(row, vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(d.agent_input_dim(), 7);
    }

    #[test]
    fn components() {
        assert_eq!(component_of("hyper_w1.w"), "hyper_w1");
        assert_eq!(component_of("critic.agent.fc1.b"), "critic");
    }
}
