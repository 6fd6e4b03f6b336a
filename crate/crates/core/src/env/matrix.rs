use serde::{Deserialize, Serialize};

use super::{check_arity, EnvError, EnvInfo, EnvStep, MultiAgentEnv};
use crate::tensor::Tensor;

/// One-shot cooperative matrix game. `payoff` is indexed row-major by the
/// joint action, first agent most significant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatrixGameConfig {
    pub n_agents: usize,
    pub n_actions: usize,
    pub payoff: Vec<f64>,
}

impl Default for MatrixGameConfig {
    /// The 3×3 non-monotonic game with the optimum at (0, 0).
    fn default() -> Self {
        Self {
            n_agents: 2,
            n_actions: 3,
            #[rustfmt::skip]
            payoff: vec![
                8.0, -12.0, -12.0,
                -12.0, 0.0, 0.0,
                -12.0, 0.0, 0.0,
            ],
        }
    }
}

impl MatrixGameConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.n_agents == 0 || self.n_actions == 0 {
            return Err(EnvError::Config(
                "matrix game needs at least one agent and one action".into(),
            ));
        }
        let expected = self.n_actions.pow(self.n_agents as u32);
        if self.payoff.len() != expected {
            return Err(EnvError::Config(format!(
                "payoff has {} entries, expected n_actions^n_agents = {expected}",
                self.payoff.len()
            )));
        }
        if self.payoff.iter().any(|x| !x.is_finite()) {
            return Err(EnvError::Config("payoff entries must be finite".into()));
        }
        Ok(())
    }

    pub fn joint_index(&self, joint_action: &[usize]) -> Result<usize, EnvError> {
        check_arity(joint_action, self.n_agents)?;
        let mut idx = 0;
        for (agent, &a) in joint_action.iter().enumerate() {
            if a >= self.n_actions {
                return Err(EnvError::ActionOutOfRange {
                    agent,
                    action: a,
                    n_actions: self.n_actions,
                });
            }
            idx = idx * self.n_actions + a;
        }
        Ok(idx)
    }

    /// Table lookup of the shared reward for a joint action.
    pub fn payoff(&self, joint_action: &[usize]) -> Result<f64, EnvError> {
        Ok(self.payoff[self.joint_index(joint_action)?])
    }

    pub fn max_payoff(&self) -> f64 {
        self.payoff.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn n_joint(&self) -> usize {
        self.payoff.len()
    }

    /// Decodes a flat joint index back into per-agent actions.
    pub fn joint_action(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.n_agents];
        for slot in out.iter_mut().rev() {
            *slot = index % self.n_actions;
            index /= self.n_actions;
        }
        out
    }
}

pub struct MatrixGame {
    config: MatrixGameConfig,
    done: bool,
    last: Option<(Vec<usize>, f64)>,
}

impl MatrixGame {
    pub fn new(config: MatrixGameConfig) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self {
            config,
            done: false,
            last: None,
        })
    }

    pub fn config(&self) -> &MatrixGameConfig {
        &self.config
    }

    fn observation(&self, reward: f64, terminated: bool) -> EnvStep {
        let n = self.config.n_agents;
        EnvStep {
            observations: vec![Tensor::vector(vec![1.0]); n],
            state: Tensor::vector(vec![1.0]),
            reward,
            terminated,
            truncated: false,
            available_actions: vec![vec![true; self.config.n_actions]; n],
        }
    }
}

impl MultiAgentEnv for MatrixGame {
    fn info(&self) -> EnvInfo {
        EnvInfo {
            n_agents: self.config.n_agents,
            n_actions: self.config.n_actions,
            obs_dim: 1,
            state_dim: 1,
            episode_limit: 1,
        }
    }

    fn reset(&mut self, _seed: u64) -> EnvStep {
        self.done = false;
        self.last = None;
        self.observation(0.0, false)
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<EnvStep, EnvError> {
        if self.done {
            return Err(EnvError::Terminated);
        }
        let r = self.config.payoff(joint_action)?;
        self.done = true;
        self.last = Some((joint_action.to_vec(), r));
        Ok(self.observation(r, true))
    }

    fn snapshot(&self) -> serde_json::Value {
        serde_json::json!({
            "done": self.done,
            "last": self.last.as_ref().map(|(a, r)| serde_json::json!({"actions": a, "reward": r})),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_payoff_lookup() {
        let c = MatrixGameConfig::default();
        assert_eq!(c.payoff(&[0, 0]).unwrap(), 8.0);
        assert_eq!(c.payoff(&[0, 1]).unwrap(), -12.0);
        for i in 0..9 {
            let a = c.joint_action(i);
            assert_eq!(c.payoff(&a).unwrap(), c.payoff[i]);
            assert_eq!(c.joint_index(&a).unwrap(), i);
        }
        assert!(matches!(
            c.payoff(&[3, 0]),
            Err(EnvError::ActionOutOfRange { agent: 0, .. })
        ));
    }

    #[test]
    fn one_shot_episode() {
        let mut env = MatrixGame::new(MatrixGameConfig::default()).unwrap();
        let s0 = env.reset(11);
        assert_eq!(s0.observations.len(), 2);
        assert_eq!(s0.observations[0].data(), &[1.0]);
        assert_eq!(s0.state, env.reset(99).state);
        let s1 = env.step(&[1, 1]).unwrap();
        assert!(s1.terminated && !s1.truncated);
        assert_eq!(s1.reward, 0.0);
        assert_eq!(env.step(&[0, 0]), Err(EnvError::Terminated));
    }

    #[test]
    fn rejects_bad_payoff_shape() {
        let c = MatrixGameConfig {
            payoff: vec![1.0; 8],
            ..MatrixGameConfig::default()
        };
        assert!(MatrixGame::new(c).is_err());
    }
}
