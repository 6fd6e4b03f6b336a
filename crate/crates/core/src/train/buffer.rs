use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// One complete episode of `len` transitions. Per-step arrays that include
/// the final observation hold `len + 1` entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub len: usize,
    /// `(len+1) × n_agents × obs_dim`
    pub obs: Vec<f64>,
    /// `(len+1) × state_dim`
    pub state: Vec<f64>,
    /// `(len+1) × n_agents × n_actions`
    pub avail: Vec<bool>,
    /// `len × n_agents`
    pub actions: Vec<usize>,
    /// `len`
    pub rewards: Vec<f64>,
    /// The last transition entered a true terminal state (no bootstrap).
    /// False when the episode was cut by the time limit.
    pub terminal: bool,
}

impl Episode {
    pub fn obs_at(&self, t: usize, agent: usize) -> &[f64] {
        let o = (t * self.n_agents + agent) * self.obs_dim;
        &self.obs[o..o + self.obs_dim]
    }

    pub fn state_at(&self, t: usize) -> &[f64] {
        &self.state[t * self.state_dim..(t + 1) * self.state_dim]
    }

    pub fn avail_at(&self, t: usize) -> Vec<Vec<bool>> {
        let k = self.n_actions;
        (0..self.n_agents)
            .map(|a| {
                let o = (t * self.n_agents + a) * k;
                self.avail[o..o + k].to_vec()
            })
            .collect()
    }

    pub fn actions_at(&self, t: usize) -> &[usize] {
        &self.actions[t * self.n_agents..(t + 1) * self.n_agents]
    }

    pub fn last_action(&self, t: usize, agent: usize) -> Option<usize> {
        (t > 0).then(|| self.actions[(t - 1) * self.n_agents + agent])
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// FIFO ring of whole episodes with uniform sampling.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<Episode>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            episodes: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn push(&mut self, episode: Episode) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    pub fn get(&self, i: usize) -> Option<&Episode> {
        self.episodes.get(i)
    }

    /// Indices of `k` distinct episodes drawn uniformly; `None` if the
    /// buffer holds fewer than `k`.
    pub fn sample_indices<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Option<Vec<usize>> {
        (self.len() >= k).then(|| sample(rng, self.len(), k).into_vec())
    }

    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Option<Vec<&Episode>> {
        self.sample_indices(k, rng)
            .map(|idx| idx.into_iter().map(|i| &self.episodes[i]).collect())
    }
}
