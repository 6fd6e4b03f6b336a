use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Episode, Learner, Result};
use crate::env::{EnvStep, MultiAgentEnv};
use crate::factor::greedy_joint_action;
use crate::tensor::Tensor;

/// Chooses joint actions from the learner's live utilities, threading the
/// recurrent state across one episode.
pub struct ActionSelector<'a> {
    learner: &'a Learner,
    hidden: Option<Tensor>,
    last: Vec<Option<usize>>,
}

impl<'a> ActionSelector<'a> {
    pub fn new(learner: &'a Learner) -> Self {
        Self {
            learner,
            hidden: None,
            last: vec![None; learner.nets.dims.n_agents],
        }
    }

    /// Per-agent ε-greedy: with probability `epsilon` an agent picks uniformly
    /// among its available actions, otherwise its masked argmax.
    pub fn select<R: Rng + ?Sized>(&mut self, step: &EnvStep, epsilon: f64, rng: &mut R) -> Result<Vec<usize>> {
        let (q, hidden) = self.learner.act(&step.observations, &self.last, self.hidden.as_ref())?;
        self.hidden = hidden;
        let greedy = greedy_joint_action(&q, &step.available_actions)?;
        let mut actions = Vec::with_capacity(greedy.len());
        for (agent, g) in greedy.into_iter().enumerate() {
            let a = if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
                let avail: Vec<usize> = (0..step.available_actions[agent].len())
                    .filter(|&a| step.available_actions[agent][a])
                    .collect();
                *avail
                    .choose(rng)
                    .expect("greedy selection already checked availability")
            } else {
                g
            };
            actions.push(a);
        }
        self.last = actions.iter().map(|&a| Some(a)).collect();
        Ok(actions)
    }
}

fn record(ep: &mut Episode, step: &EnvStep) {
    for o in &step.observations {
        ep.obs.extend_from_slice(o.data());
    }
    ep.state.extend_from_slice(step.state.data());
    for m in &step.available_actions {
        ep.avail.extend_from_slice(m);
    }
}

/// Plays one episode with per-agent ε-greedy exploration. With `trace`,
/// one JSON line per step is written holding the actions, the reward and
/// the environment snapshot after the step.
pub fn collect_episode<R: Rng + ?Sized>(
    env: &mut dyn MultiAgentEnv,
    learner: &Learner,
    epsilon: f64,
    env_seed: u64,
    rng: &mut R,
    mut trace: Option<&mut dyn Write>,
) -> Result<Episode> {
    let info = env.info();
    let mut ep = Episode {
        n_agents: info.n_agents,
        n_actions: info.n_actions,
        obs_dim: info.obs_dim,
        state_dim: info.state_dim,
        len: 0,
        obs: Vec::new(),
        state: Vec::new(),
        avail: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
        terminal: false,
    };
    let mut step = env.reset(env_seed);
    record(&mut ep, &step);
    let mut selector = ActionSelector::new(learner);
    loop {
        let actions = selector.select(&step, epsilon, rng)?;
        step = env.step(&actions)?;
        ep.actions.extend_from_slice(&actions);
        ep.rewards.push(step.reward);
        ep.len += 1;
        record(&mut ep, &step);
        if let Some(w) = trace.as_deref_mut() {
            let line = serde_json::json!({
                "t": ep.len - 1,
                "actions": actions,
                "reward": step.reward,
                "env": env.snapshot(),
            });
            let _ = writeln!(w, "{line}");
        }
        if step.terminated {
            ep.terminal = !step.truncated;
            return Ok(ep);
        }
    }
}

/// Greedy (ε = 0) returns of `episodes` episodes. Environment seeds derive
/// from `seed` only, so evaluation never touches the training streams.
pub fn evaluate(env: &mut dyn MultiAgentEnv, learner: &Learner, episodes: usize, seed: u64) -> Result<Vec<f64>> {
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    (0..episodes)
        .map(|_| {
            let s = seeds.gen::<u64>();
            let ep = collect_episode(env, learner, 0.0, s, &mut unused, None)?;
            Ok(ep.total_reward())
        })
        .collect()
}
