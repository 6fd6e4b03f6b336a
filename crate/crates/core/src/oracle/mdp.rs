use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{OracleError, Result};

pub const MAX_STATES: usize = 64;
pub const MAX_AGENTS: usize = 3;
pub const MAX_AGENT_ACTIONS: usize = 4;

const ROW_TOL: f64 = 1e-9;

/// A small fully observable multi-agent MDP with explicit tables.
///
/// Joint actions are flat indices, first agent most significant.
/// `transition[(s * n_joint + u) * n_states + s2] = P(s2 | s, u)` and
/// `reward[s * n_joint + u] = r(s, u)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TinyMdp {
    n_states: usize,
    action_counts: Vec<usize>,
    transition: Vec<f64>,
    reward: Vec<f64>,
    gamma: f64,
    initial: Vec<f64>,
}

impl TinyMdp {
    pub fn new(
        n_states: usize,
        action_counts: Vec<usize>,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        initial: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_states > MAX_STATES {
            return Err(OracleError::Invalid(format!(
                "{n_states} states; allowed 1..={MAX_STATES}"
            )));
        }
        if action_counts.is_empty() || action_counts.len() > MAX_AGENTS {
            return Err(OracleError::Invalid(format!(
                "{} agents; allowed 1..={MAX_AGENTS}",
                action_counts.len()
            )));
        }
        if action_counts.iter().any(|&k| k == 0 || k > MAX_AGENT_ACTIONS) {
            return Err(OracleError::Invalid(format!(
                "action counts {action_counts:?}; each must be in 1..={MAX_AGENT_ACTIONS}"
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(OracleError::Invalid(format!("gamma {gamma} must be in [0, 1)")));
        }
        let n_joint: usize = action_counts.iter().product();
        if transition.len() != n_states * n_joint * n_states {
            return Err(OracleError::Invalid(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                n_states * n_joint * n_states
            )));
        }
        if reward.len() != n_states * n_joint || reward.iter().any(|r| !r.is_finite()) {
            return Err(OracleError::Invalid(
                "reward must hold one finite entry per (s, u)".into(),
            ));
        }
        for (row, p) in transition.chunks(n_states).enumerate() {
            check_distribution(p, &format!("transition row {row}"))?;
        }
        if initial.len() != n_states {
            return Err(OracleError::Invalid(
                "initial distribution length differs from state count".into(),
            ));
        }
        check_distribution(&initial, "initial distribution")?;
        Ok(Self {
            n_states,
            action_counts,
            transition,
            reward,
            gamma,
            initial,
        })
    }

    /// A random instance with dense Dirichlet-like transitions, rewards in
    /// `[-1, 1]` and a random initial distribution.
    pub fn random<R: Rng + ?Sized>(
        n_states: usize,
        action_counts: Vec<usize>,
        gamma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let n_joint: usize = action_counts.iter().product();
        let mut transition = Vec::with_capacity(n_states * n_joint * n_states);
        for _ in 0..n_states * n_joint {
            transition.extend(random_simplex(n_states, rng));
        }
        let reward = (0..n_states * n_joint).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let initial = random_simplex(n_states, rng);
        Self::new(n_states, action_counts, transition, reward, gamma, initial)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_agents(&self) -> usize {
        self.action_counts.len()
    }

    pub fn action_counts(&self) -> &[usize] {
        &self.action_counts
    }

    pub fn n_joint(&self) -> usize {
        self.action_counts.iter().product()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn reward(&self, s: usize, u: usize) -> f64 {
        self.reward[s * self.n_joint() + u]
    }

    pub fn transition_row(&self, s: usize, u: usize) -> &[f64] {
        let start = (s * self.n_joint() + u) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    /// Per-agent actions of a flat joint index.
    pub fn decode(&self, mut u: usize) -> Vec<usize> {
        let mut out = vec![0; self.n_agents()];
        for (slot, &k) in out.iter_mut().zip(&self.action_counts).rev() {
            *slot = u % k;
            u /= k;
        }
        out
    }

    /// `P_π[s][s2]` and `r_π[s]` under `policy`.
    fn markov_chain(&self, policy: &ExactPolicy) -> (DMatrix<f64>, DVector<f64>) {
        let ns = self.n_states;
        let mut p = DMatrix::zeros(ns, ns);
        let mut r = DVector::zeros(ns);
        for s in 0..ns {
            for u in 0..self.n_joint() {
                let pu = policy.joint_prob(self, s, u);
                if pu == 0.0 {
                    continue;
                }
                r[s] += pu * self.reward(s, u);
                for (s2, &t) in self.transition_row(s, u).iter().enumerate() {
                    p[(s, s2)] += pu * t;
                }
            }
        }
        (p, r)
    }

    /// `Q(s,u) = r(s,u) + γ Σ_s2 P(s2|s,u) V(s2)`, flat `[s × n_joint]`.
    pub fn q_from_values(&self, v: &[f64]) -> Vec<f64> {
        let nj = self.n_joint();
        let mut q = vec![0.0; self.n_states * nj];
        for s in 0..self.n_states {
            for u in 0..nj {
                let next: f64 = self.transition_row(s, u).iter().zip(v).map(|(p, v)| p * v).sum();
                q[s * nj + u] = self.reward(s, u) + self.gamma * next;
            }
        }
        q
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(OracleError::Invalid(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > ROW_TOL {
        return Err(OracleError::Invalid(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

fn random_simplex<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let mut x: Vec<f64> = (0..k).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let z: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= z);
    x
}

/// Per-agent state-conditioned action distributions; the joint policy is
/// their product. `per_agent[a][s * k_a + u_a] = π^a(u_a | s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactPolicy {
    pub per_agent: Vec<Vec<f64>>,
}

impl ExactPolicy {
    pub fn validate(&self, mdp: &TinyMdp) -> Result<()> {
        if self.per_agent.len() != mdp.n_agents() {
            return Err(OracleError::Invalid(format!(
                "policy has {} agents, MDP has {}",
                self.per_agent.len(),
                mdp.n_agents()
            )));
        }
        for (a, (table, &k)) in self.per_agent.iter().zip(mdp.action_counts()).enumerate() {
            if table.len() != mdp.n_states() * k {
                return Err(OracleError::Invalid(format!(
                    "agent {a} policy table has the wrong size"
                )));
            }
            for (s, row) in table.chunks(k).enumerate() {
                check_distribution(row, &format!("policy of agent {a} at state {s}"))?;
            }
        }
        Ok(())
    }

    pub fn random<R: Rng + ?Sized>(mdp: &TinyMdp, rng: &mut R) -> Self {
        let per_agent = mdp
            .action_counts()
            .iter()
            .map(|&k| (0..mdp.n_states()).flat_map(|_| random_simplex(k, rng)).collect())
            .collect();
        Self { per_agent }
    }

    /// Deterministic policy from a joint action per state.
    pub fn deterministic(mdp: &TinyMdp, joint_per_state: &[usize]) -> Self {
        let mut per_agent: Vec<Vec<f64>> = mdp
            .action_counts()
            .iter()
            .map(|&k| vec![0.0; mdp.n_states() * k])
            .collect();
        for (s, &u) in joint_per_state.iter().enumerate() {
            for (a, ua) in mdp.decode(u).into_iter().enumerate() {
                per_agent[a][s * mdp.action_counts()[a] + ua] = 1.0;
            }
        }
        Self { per_agent }
    }

    /// Product of per-agent Boltzmann (temperature 1) policies over utility
    /// tables laid out like `per_agent`.
    pub fn boltzmann(mdp: &TinyMdp, utilities: &AgentUtilities) -> Self {
        let per_agent = utilities
            .tables
            .iter()
            .zip(mdp.action_counts())
            .map(|(table, &k)| table.chunks(k).flat_map(softmax).collect())
            .collect();
        Self { per_agent }
    }

    pub fn agent_prob(&self, mdp: &TinyMdp, agent: usize, s: usize, ua: usize) -> f64 {
        self.per_agent[agent][s * mdp.action_counts()[agent] + ua]
    }

    pub fn joint_prob(&self, mdp: &TinyMdp, s: usize, u: usize) -> f64 {
        mdp.decode(u)
            .into_iter()
            .enumerate()
            .map(|(a, ua)| self.agent_prob(mdp, a, s, ua))
            .product()
    }
}

pub(crate) fn softmax(q: &[f64]) -> Vec<f64> {
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = q.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Per-agent utility tables `Q^a(s, u_a)`, combined additively into the
/// joint `Q_k(s, u) = Σ_a Q^a(s, u_a)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentUtilities {
    pub tables: Vec<Vec<f64>>,
}

impl AgentUtilities {
    pub fn random<R: Rng + ?Sized>(mdp: &TinyMdp, scale: f64, rng: &mut R) -> Self {
        let tables = mdp
            .action_counts()
            .iter()
            .map(|&k| (0..mdp.n_states() * k).map(|_| rng.gen_range(-scale..=scale)).collect())
            .collect();
        Self { tables }
    }

    /// The joint table `Q_k`, flat `[s × n_joint]`.
    pub fn joint(&self, mdp: &TinyMdp) -> Vec<f64> {
        let nj = mdp.n_joint();
        let mut q = vec![0.0; mdp.n_states() * nj];
        for s in 0..mdp.n_states() {
            for u in 0..nj {
                q[s * nj + u] = mdp
                    .decode(u)
                    .into_iter()
                    .enumerate()
                    .map(|(a, ua)| self.tables[a][s * mdp.action_counts()[a] + ua])
                    .sum();
            }
        }
        q
    }
}

/// Discounted state-action distribution `d^π(s,u) = d^π(s) π(u|s)`, flat
/// `[s × n_joint]`, from the dense solve `(I − γ P_πᵀ) d = (1 − γ) ρ0`.
pub fn discounted_distribution(mdp: &TinyMdp, policy: &ExactPolicy) -> Result<Vec<f64>> {
    policy.validate(mdp)?;
    let d_state = discounted_state_distribution(mdp, policy)?;
    let nj = mdp.n_joint();
    let mut d = vec![0.0; mdp.n_states() * nj];
    for (s, &ds) in d_state.iter().enumerate() {
        for u in 0..nj {
            d[s * nj + u] = ds * policy.joint_prob(mdp, s, u);
        }
    }
    Ok(d)
}

pub fn discounted_state_distribution(mdp: &TinyMdp, policy: &ExactPolicy) -> Result<Vec<f64>> {
    let (p, _) = mdp.markov_chain(policy);
    let ns = mdp.n_states();
    let a = DMatrix::identity(ns, ns) - p.transpose() * mdp.gamma();
    let rhs = DVector::from_iterator(ns, mdp.initial().iter().map(|x| (1.0 - mdp.gamma()) * x));
    let d = a
        .lu()
        .solve(&rhs)
        .ok_or(OracleError::Singular("discounted distribution"))?;
    Ok(d.iter().map(|&x| x.max(0.0)).collect())
}

/// State values `V^π` from `(I − γ P_π) V = r_π`.
pub fn policy_values(mdp: &TinyMdp, policy: &ExactPolicy) -> Result<Vec<f64>> {
    policy.validate(mdp)?;
    let (p, r) = mdp.markov_chain(policy);
    let ns = mdp.n_states();
    let a = DMatrix::identity(ns, ns) - p * mdp.gamma();
    let v = a.lu().solve(&r).ok_or(OracleError::Singular("policy evaluation"))?;
    Ok(v.iter().copied().collect())
}

/// Both routes to `η(π)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactReturn {
    /// `(1/(1−γ)) Σ d^π(s,u) r(s,u)`.
    pub via_distribution: f64,
    /// `Σ ρ0(s) V^π(s)`.
    pub via_values: f64,
}

impl ExactReturn {
    pub fn value(&self) -> f64 {
        self.via_distribution
    }

    pub fn discrepancy(&self) -> f64 {
        (self.via_distribution - self.via_values).abs()
    }
}

pub fn exact_return(mdp: &TinyMdp, policy: &ExactPolicy) -> Result<ExactReturn> {
    let d = discounted_distribution(mdp, policy)?;
    let nj = mdp.n_joint();
    let weighted: f64 = d.iter().enumerate().map(|(i, &p)| p * mdp.reward(i / nj, i % nj)).sum();
    let v = policy_values(mdp, policy)?;
    Ok(ExactReturn {
        via_distribution: weighted / (1.0 - mdp.gamma()),
        via_values: mdp.initial().iter().zip(&v).map(|(p, v)| p * v).sum(),
    })
}

/// Optimal joint values from value iteration over joint actions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalSolution {
    pub values: Vec<f64>,
    /// `Q*(s,u)`, flat `[s × n_joint]`.
    pub q: Vec<f64>,
    /// Greedy joint action per state, ties to the lowest index.
    pub greedy: Vec<usize>,
    pub iterations: usize,
}

pub const VALUE_ITERATION_TOL: f64 = 1e-12;

pub fn value_iteration(mdp: &TinyMdp) -> OptimalSolution {
    let nj = mdp.n_joint();
    let mut v = vec![0.0; mdp.n_states()];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let q = mdp.q_from_values(&v);
        let next: Vec<f64> = q
            .chunks(nj)
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        // Contraction: the distance to V* is at most γ/(1−γ) times the step.
        if delta * mdp.gamma() / (1.0 - mdp.gamma()) < VALUE_ITERATION_TOL || delta == 0.0 {
            break;
        }
    }
    let q = mdp.q_from_values(&v);
    let greedy = q.chunks(nj).map(argmax).collect();
    OptimalSolution {
        values: v,
        q,
        greedy,
        iterations,
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// `η(π*) − η(π)` with `π*` greedy on the value-iteration optimum.
pub fn exact_regret(mdp: &TinyMdp, policy: &ExactPolicy) -> Result<f64> {
    let opt = value_iteration(mdp);
    regret_against(mdp, &opt, policy)
}

pub(crate) fn regret_against(mdp: &TinyMdp, opt: &OptimalSolution, policy: &ExactPolicy) -> Result<f64> {
    let best = exact_return(mdp, &ExactPolicy::deterministic(mdp, &opt.greedy))?.value();
    Ok(best - exact_return(mdp, policy)?.value())
}

/// `d^π(s,u) / μ(s,u)` for a buffer distribution `μ` over `(s, u)` that is
/// positive everywhere.
pub fn onpoliciness_ratio(mdp: &TinyMdp, policy: &ExactPolicy, mu: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != mdp.n_states() * mdp.n_joint() {
        return Err(OracleError::Invalid(
            "buffer distribution must have one entry per (s, u)".into(),
        ));
    }
    if mu.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
        return Err(OracleError::Invalid(
            "buffer distribution must be positive everywhere".into(),
        ));
    }
    check_distribution(mu, "buffer distribution")?;
    let d = discounted_distribution(mdp, policy)?;
    Ok(d.iter().zip(mu).map(|(d, m)| d / m).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_state(reward: f64, gamma: f64) -> TinyMdp {
        TinyMdp::new(1, vec![1], vec![1.0], vec![reward], gamma, vec![1.0]).unwrap()
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(TinyMdp::new(1, vec![1], vec![0.5], vec![0.0], 0.9, vec![1.0]).is_err());
        assert!(TinyMdp::new(1, vec![5], vec![1.0; 5], vec![0.0; 5], 0.9, vec![1.0]).is_err());
        assert!(TinyMdp::new(1, vec![1], vec![1.0], vec![0.0], 1.0, vec![1.0]).is_err());
        assert!(TinyMdp::new(65, vec![1], vec![], vec![], 0.9, vec![]).is_err());
    }

    #[test]
    fn constant_reward_is_a_geometric_series() {
        let mdp = one_state(2.0, 0.9);
        let pi = ExactPolicy {
            per_agent: vec![vec![1.0]],
        };
        let ret = exact_return(&mdp, &pi).unwrap();
        assert!((ret.via_distribution - 20.0).abs() < 1e-10);
        assert!((ret.via_values - 20.0).abs() < 1e-10);
        assert_eq!(exact_return(&one_state(0.0, 0.9), &pi).unwrap().value(), 0.0);
    }

    #[test]
    fn decode_matches_row_major_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mdp = TinyMdp::random(2, vec![2, 3], 0.5, &mut rng).unwrap();
        assert_eq!(mdp.decode(0), vec![0, 0]);
        assert_eq!(mdp.decode(4), vec![1, 1]);
        assert_eq!(mdp.decode(5), vec![1, 2]);
    }

    #[test]
    fn optimal_policy_has_zero_regret() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mdp = TinyMdp::random(4, vec![2, 2], 0.9, &mut rng).unwrap();
        let opt = value_iteration(&mdp);
        let r = exact_regret(&mdp, &ExactPolicy::deterministic(&mdp, &opt.greedy)).unwrap();
        assert!(r.abs() < 1e-10, "{r}");
    }

    #[test]
    fn onpoliciness_rejects_zero_mass() {
        let mdp = one_state(1.0, 0.5);
        let pi = ExactPolicy {
            per_agent: vec![vec![1.0]],
        };
        assert!(onpoliciness_ratio(&mdp, &pi, &[0.0]).is_err());
        assert_eq!(onpoliciness_ratio(&mdp, &pi, &[1.0]).unwrap(), vec![1.0]);
    }
}
