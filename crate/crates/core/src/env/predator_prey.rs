//! Grid-world Predator-Prey with coordinated captures.
//!
//! Predators move in the four compass directions, stay, or attempt a catch.
//! A prey is captured when at least two catching predators are adjacent to
//! it; the prey and two catchers leave the grid. A lone attempt costs the
//! configured punishment.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_arity, EnvError, EnvInfo, EnvStep, MultiAgentEnv};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(usize)]
pub enum Action {
    Stay = 0,
    Up = 1,
    Down = 2,
    Left = 3,
    Right = 4,
    Catch = 5,
}

impl Action {
    pub const COUNT: usize = 6;
    const MOVES: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Stay | Action::Catch => (0, 0),
        }
    }

    fn from_index(i: usize) -> Option<Action> {
        [
            Action::Stay,
            Action::Up,
            Action::Down,
            Action::Left,
            Action::Right,
            Action::Catch,
        ]
        .get(i)
        .copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredatorPreyConfig {
    /// `[height, width]` in cells.
    pub grid: [usize; 2],
    pub n_predators: usize,
    pub n_prey: usize,
    /// Reward added per unsuccessful catch attempt (≤ 0).
    pub punishment: f64,
    pub capture_reward: f64,
    pub episode_limit: usize,
    /// Side of the square observation window (odd).
    pub obs_window: usize,
}

impl Default for PredatorPreyConfig {
    /// Desk-scale task: 6×6 grid, 4 predators, 4 prey, 100 steps.
    fn default() -> Self {
        Self {
            grid: [6, 6],
            n_predators: 4,
            n_prey: 4,
            punishment: -2.0,
            capture_reward: 10.0,
            episode_limit: 100,
            obs_window: 5,
        }
    }
}

impl PredatorPreyConfig {
    /// 10×10 grid, 8 predators, 8 prey, 200 steps.
    pub fn paper_scale(punishment: f64) -> Self {
        Self {
            grid: [10, 10],
            n_predators: 8,
            n_prey: 8,
            punishment,
            capture_reward: 10.0,
            episode_limit: 200,
            obs_window: 5,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let [h, w] = self.grid;
        if self.obs_window == 0 || self.obs_window.is_multiple_of(2) {
            return Err(EnvError::Config(format!(
                "obs_window must be odd, got {}",
                self.obs_window
            )));
        }
        if h < self.obs_window || w < self.obs_window {
            return Err(EnvError::Config(format!(
                "grid {h}x{w} is smaller than the {0}x{0} observation window",
                self.obs_window
            )));
        }
        if self.n_predators == 0 {
            return Err(EnvError::Config("need at least one predator".into()));
        }
        if self.n_predators + self.n_prey > h * w {
            return Err(EnvError::Config(format!(
                "cannot place {} entities on {} cells",
                self.n_predators + self.n_prey,
                h * w
            )));
        }
        if self.episode_limit == 0 {
            return Err(EnvError::Config("episode_limit must be positive".into()));
        }
        if !self.punishment.is_finite() || !self.capture_reward.is_finite() {
            return Err(EnvError::Config("rewards must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    fn adjacent(self, other: Pos) -> bool {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col) == 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    pub predators: Vec<Pos>,
    pub prey: Vec<Pos>,
    pub predator_alive: Vec<bool>,
    pub prey_alive: Vec<bool>,
    pub step: usize,
}

pub struct PredatorPrey {
    config: PredatorPreyConfig,
    state: GridState,
    rng: ChaCha8Rng,
    done: bool,
}

#[derive(Clone, Copy, PartialEq)]
enum Entity {
    Predator(usize),
    Prey(usize),
}

impl PredatorPrey {
    pub fn new(config: PredatorPreyConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let state = GridState {
            predators: vec![],
            prey: vec![],
            predator_alive: vec![],
            prey_alive: vec![],
            step: 0,
        };
        let mut env = Self {
            config,
            state,
            rng: ChaCha8Rng::seed_from_u64(0),
            done: false,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn config(&self) -> &PredatorPreyConfig {
        &self.config
    }

    pub fn state(&self) -> &GridState {
        &self.state
    }

    /// Replaces the grid state, e.g. to set up a hand-built scenario.
    /// Positions must be in range and pairwise distinct among living entities.
    pub fn set_state(&mut self, state: GridState) -> Result<EnvStep, EnvError> {
        let [h, w] = self.config.grid;
        if state.predators.len() != self.config.n_predators
            || state.prey.len() != self.config.n_prey
            || state.predator_alive.len() != state.predators.len()
            || state.prey_alive.len() != state.prey.len()
        {
            return Err(EnvError::Config("state entity counts do not match the config".into()));
        }
        let mut seen = std::collections::HashSet::new();
        let living = state
            .predators
            .iter()
            .zip(&state.predator_alive)
            .chain(state.prey.iter().zip(&state.prey_alive))
            .filter(|(_, &alive)| alive);
        for (p, _) in living {
            if p.row >= h || p.col >= w || !seen.insert(*p) {
                return Err(EnvError::Config(format!("invalid or duplicate position {p:?}")));
            }
        }
        self.state = state;
        self.done = false;
        Ok(self.current(0.0, false, false))
    }

    fn occupied(&self, p: Pos) -> bool {
        self.entity_at(p).is_some()
    }

    fn entity_at(&self, p: Pos) -> Option<Entity> {
        let s = &self.state;
        (0..s.predators.len())
            .find(|&i| s.predator_alive[i] && s.predators[i] == p)
            .map(Entity::Predator)
            .or_else(|| {
                (0..s.prey.len())
                    .find(|&j| s.prey_alive[j] && s.prey[j] == p)
                    .map(Entity::Prey)
            })
    }

    fn target(&self, p: Pos, a: Action) -> Option<Pos> {
        let (dr, dc) = a.delta();
        let r = p.row as isize + dr;
        let c = p.col as isize + dc;
        let [h, w] = self.config.grid;
        (r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w).then(|| Pos::new(r as usize, c as usize))
    }

    fn prey_adjacent(&self, p: Pos) -> bool {
        let s = &self.state;
        s.prey
            .iter()
            .zip(&s.prey_alive)
            .any(|(q, &alive)| alive && p.adjacent(*q))
    }

    /// Availability mask for one predator under the current state.
    pub fn available(&self, agent: usize) -> Vec<bool> {
        let mut mask = vec![false; Action::COUNT];
        mask[Action::Stay as usize] = true;
        if !self.state.predator_alive[agent] {
            return mask;
        }
        let p = self.state.predators[agent];
        for a in Action::MOVES {
            if let Some(t) = self.target(p, a) {
                mask[a as usize] = !self.occupied(t);
            }
        }
        mask[Action::Catch as usize] = self.prey_adjacent(p);
        mask
    }

    /// Two-channel `w×w` window centred on the agent (predators, then prey),
    /// flattened channel-major then row-major. Dead agents see zeros.
    pub fn observe(&self, agent: usize) -> Tensor {
        let w = self.config.obs_window;
        let radius = (w / 2) as isize;
        let mut data = vec![0.0; 2 * w * w];
        if !self.state.predator_alive[agent] {
            return Tensor::vector(data);
        }
        let me = self.state.predators[agent];
        let mut mark = |channel: usize, p: Pos| {
            let dr = p.row as isize - me.row as isize;
            let dc = p.col as isize - me.col as isize;
            if dr.abs() <= radius && dc.abs() <= radius {
                let r = (dr + radius) as usize;
                let c = (dc + radius) as usize;
                data[channel * w * w + r * w + c] = 1.0;
            }
        };
        let s = &self.state;
        for (p, _) in s.predators.iter().zip(&s.predator_alive).filter(|(_, &a)| a) {
            mark(0, *p);
        }
        for (p, _) in s.prey.iter().zip(&s.prey_alive).filter(|(_, &a)| a) {
            mark(1, *p);
        }
        Tensor::vector(data)
    }

    /// Full-grid occupancy in two channels.
    pub fn global_state(&self) -> Tensor {
        let [h, w] = self.config.grid;
        let mut data = vec![0.0; 2 * h * w];
        let s = &self.state;
        for (p, _) in s.predators.iter().zip(&s.predator_alive).filter(|(_, &a)| a) {
            data[p.row * w + p.col] = 1.0;
        }
        for (p, _) in s.prey.iter().zip(&s.prey_alive).filter(|(_, &a)| a) {
            data[h * w + p.row * w + p.col] = 1.0;
        }
        Tensor::vector(data)
    }

    fn current(&self, reward: f64, terminated: bool, truncated: bool) -> EnvStep {
        let n = self.config.n_predators;
        EnvStep {
            observations: (0..n).map(|i| self.observe(i)).collect(),
            state: self.global_state(),
            reward,
            terminated,
            truncated,
            available_actions: (0..n).map(|i| self.available(i)).collect(),
        }
    }

    fn try_move(&mut self, who: Entity, a: Action) {
        let from = match who {
            Entity::Predator(i) => self.state.predators[i],
            Entity::Prey(j) => self.state.prey[j],
        };
        if let Some(to) = self.target(from, a) {
            if !self.occupied(to) {
                match who {
                    Entity::Predator(i) => self.state.predators[i] = to,
                    Entity::Prey(j) => self.state.prey[j] = to,
                }
            }
        }
    }
}

impl MultiAgentEnv for PredatorPrey {
    fn info(&self) -> EnvInfo {
        let [h, w] = self.config.grid;
        EnvInfo {
            n_agents: self.config.n_predators,
            n_actions: Action::COUNT,
            obs_dim: 2 * self.config.obs_window * self.config.obs_window,
            state_dim: 2 * h * w,
            episode_limit: self.config.episode_limit,
        }
    }

    fn reset(&mut self, seed: u64) -> EnvStep {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let [h, w] = self.config.grid;
        let mut cells: Vec<usize> = (0..h * w).collect();
        cells.shuffle(&mut self.rng);
        let pos = |c: usize| Pos::new(c / w, c % w);
        let np = self.config.n_predators;
        self.state = GridState {
            predators: cells[..np].iter().map(|&c| pos(c)).collect(),
            prey: cells[np..np + self.config.n_prey].iter().map(|&c| pos(c)).collect(),
            predator_alive: vec![true; np],
            prey_alive: vec![true; self.config.n_prey],
            step: 0,
        };
        self.done = false;
        self.current(0.0, false, false)
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<EnvStep, EnvError> {
        if self.done {
            return Err(EnvError::Terminated);
        }
        let n = self.config.n_predators;
        check_arity(joint_action, n)?;
        let mut actions = Vec::with_capacity(n);
        for (agent, &a) in joint_action.iter().enumerate() {
            let act = Action::from_index(a).ok_or(EnvError::ActionOutOfRange {
                agent,
                action: a,
                n_actions: Action::COUNT,
            })?;
            if !self.available(agent)[a] {
                return Err(EnvError::Unavailable { agent, action: a });
            }
            actions.push(act);
        }

        let catchers: Vec<usize> = (0..n)
            .filter(|&i| self.state.predator_alive[i] && actions[i] == Action::Catch)
            .collect();
        // Prey next to a catch attempt are held in place this step.
        let held: Vec<bool> = (0..self.config.n_prey)
            .map(|j| {
                self.state.prey_alive[j]
                    && catchers
                        .iter()
                        .any(|&i| self.state.predators[i].adjacent(self.state.prey[j]))
            })
            .collect();

        // Movement, in a random entity order; blocked entities stay put.
        let mut moves: Vec<(Entity, Action)> = (0..n)
            .filter(|&i| self.state.predator_alive[i] && Action::MOVES.contains(&actions[i]))
            .map(|i| (Entity::Predator(i), actions[i]))
            .collect();
        for (j, &is_held) in held.iter().enumerate() {
            if !self.state.prey_alive[j] || is_held {
                continue;
            }
            let here = self.state.prey[j];
            let mut options = vec![Action::Stay];
            options.extend(
                Action::MOVES
                    .into_iter()
                    .filter(|&a| self.target(here, a).is_some_and(|t| !self.occupied(t))),
            );
            let a = options[self.rng.gen_range(0..options.len())];
            if a != Action::Stay {
                moves.push((Entity::Prey(j), a));
            }
        }
        moves.shuffle(&mut self.rng);
        for (who, a) in moves {
            self.try_move(who, a);
        }

        // Captures, prey in index order; the two lowest-indexed adjacent
        // catchers are consumed.
        let mut reward = 0.0;
        let mut consumed = vec![false; n];
        let mut captured_at = Vec::new();
        for j in 0..self.config.n_prey {
            if !self.state.prey_alive[j] {
                continue;
            }
            let q = self.state.prey[j];
            let pair: Vec<usize> = catchers
                .iter()
                .copied()
                .filter(|&i| !consumed[i] && self.state.predators[i].adjacent(q))
                .take(2)
                .collect();
            if pair.len() == 2 {
                for &i in &pair {
                    consumed[i] = true;
                    self.state.predator_alive[i] = false;
                }
                self.state.prey_alive[j] = false;
                captured_at.push(q);
                reward += self.config.capture_reward;
            }
        }
        for &i in &catchers {
            if consumed[i] {
                continue;
            }
            let p = self.state.predators[i];
            if !captured_at.iter().any(|&q| p.adjacent(q)) {
                reward += self.config.punishment;
            }
        }

        self.state.step += 1;
        let all_removed = !self.state.predator_alive.iter().any(|&a| a);
        let at_limit = self.state.step >= self.config.episode_limit;
        let terminated = all_removed || at_limit;
        self.done = terminated;
        Ok(self.current(reward, terminated, at_limit && !all_removed))
    }

    fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(&self.state).unwrap_or(serde_json::Value::Null)
    }
}
