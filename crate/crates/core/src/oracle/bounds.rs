use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mdp::{
    discounted_distribution, discounted_state_distribution, regret_against, softmax, value_iteration, AgentUtilities,
    ExactPolicy, TinyMdp,
};
use super::Result;

pub const CHECK_TOL: f64 = 1e-9;

/// `E_{π̄}[Q] − E_{π}[Q]` with `π` the temperature-1 Boltzmann policy of `q`.
pub fn boltzmann_gap(q: &[f64], comparison: &[f64]) -> f64 {
    let pi = softmax(q);
    let expect = |p: &[f64]| p.iter().zip(q).map(|(p, q)| p * q).sum::<f64>();
    expect(comparison) - expect(&pi)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapCheck {
    pub trials: usize,
    pub max_gap: f64,
    pub holds: bool,
    pub witness_q: Vec<f64>,
    pub witness_comparison: Vec<f64>,
}

/// Random `Q` rows of 2 to `max_actions` entries at random scales, compared
/// against point masses on the best action (the worst case) and random
/// mixtures.
pub fn boltzmann_gap_check<R: Rng + ?Sized>(trials: usize, max_actions: usize, rng: &mut R) -> GapCheck {
    let mut best = GapCheck {
        trials,
        max_gap: f64::NEG_INFINITY,
        holds: true,
        witness_q: Vec::new(),
        witness_comparison: Vec::new(),
    };
    for _ in 0..trials {
        let k = rng.gen_range(2..=max_actions.max(2));
        let scale = 10f64.powf(rng.gen_range(-2.0..1.0));
        let q: Vec<f64> = (0..k).map(|_| rng.gen_range(-scale..=scale)).collect();
        let comparison = if rng.gen_bool(0.5) {
            let mut p = vec![0.0; k];
            p[super::mdp::argmax(&q)] = 1.0;
            p
        } else {
            let mut p: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
            let z: f64 = p.iter().sum();
            p.iter_mut().for_each(|x| *x /= z);
            p
        };
        let gap = boltzmann_gap(&q, &comparison);
        if gap > best.max_gap {
            best.max_gap = gap;
            best.witness_q = q;
            best.witness_comparison = comparison;
        }
    }
    best.holds = best.max_gap <= 1.0 + CHECK_TOL;
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JensenCheck {
    /// `−log E[exp(−X)]`.
    pub lhs: f64,
    /// `E[X]`.
    pub rhs: f64,
    pub holds: bool,
}

/// Convexity of `exp(−x)` in the form `−log E[exp(−X)] ≤ E[X]`, for samples
/// `x` with non-negative probabilities `p`.
pub fn jensen_check(x: &[f64], p: &[f64]) -> JensenCheck {
    let z: f64 = p.iter().sum();
    let rhs = x.iter().zip(p).map(|(x, p)| x * p).sum::<f64>() / z;
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let mean_exp = x.iter().zip(p).map(|(x, p)| p * (min - x).exp()).sum::<f64>() / z;
    let lhs = min - mean_exp.ln();
    JensenCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + CHECK_TOL * (1.0 + rhs.abs()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JensenTrials {
    pub trials: usize,
    pub failures: usize,
    /// Largest `lhs − rhs` seen.
    pub max_violation: f64,
    pub witness_x: Vec<f64>,
    pub witness_p: Vec<f64>,
}

pub fn jensen_trials<R: Rng + ?Sized>(trials: usize, rng: &mut R) -> JensenTrials {
    let mut out = JensenTrials {
        trials,
        failures: 0,
        max_violation: f64::NEG_INFINITY,
        witness_x: Vec::new(),
        witness_p: Vec::new(),
    };
    for _ in 0..trials {
        let k = rng.gen_range(1..=16);
        let scale = 10f64.powf(rng.gen_range(-2.0..1.5));
        let x: Vec<f64> = (0..k).map(|_| rng.gen_range(-scale..=scale)).collect();
        let p: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let c = jensen_check(&x, &p);
        if !c.holds {
            out.failures += 1;
        }
        if c.lhs - c.rhs > out.max_violation {
            out.max_violation = c.lhs - c.rhs;
            out.witness_x = x;
            out.witness_p = p;
        }
    }
    out
}

/// Regret of the Boltzmann policy over `Q_k` against the relaxed bound
/// `(1/(1−γ)) [E_{d(s)}(Q* − Q_k)(s,u*) + E_{d(s,u)}(Q_k − Q*)(s,u) + 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpperBound {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// The same bound without the `+1` term.
    pub rhs_without_slack: f64,
    pub holds_without_slack: bool,
}

/// `Q*` is always computed here by value iteration on `mdp`; there is no way
/// to pass an external one. `π_k` is the product of per-agent Boltzmann
/// policies, which equals the joint Boltzmann policy of the additive `Q_k`.
pub fn upper_bound_check(mdp: &TinyMdp, q_k: &AgentUtilities) -> Result<UpperBound> {
    let opt = value_iteration(mdp);
    let pi_k = ExactPolicy::boltzmann(mdp, q_k);
    let joint_k = q_k.joint(mdp);
    let d = discounted_distribution(mdp, &pi_k)?;
    let d_state = discounted_state_distribution(mdp, &pi_k)?;
    let nj = mdp.n_joint();

    let at_optimum: f64 = d_state
        .iter()
        .enumerate()
        .map(|(s, ds)| {
            let u = s * nj + opt.greedy[s];
            ds * (opt.q[u] - joint_k[u])
        })
        .sum();
    let on_policy: f64 = d.iter().enumerate().map(|(i, di)| di * (joint_k[i] - opt.q[i])).sum();
    let horizon = 1.0 / (1.0 - mdp.gamma());
    let lhs = regret_against(mdp, &opt, &pi_k)?;
    let rhs = horizon * (at_optimum + on_policy + 1.0);
    let rhs_without_slack = horizon * (at_optimum + on_policy);
    Ok(UpperBound {
        lhs,
        rhs,
        holds: lhs <= rhs + CHECK_TOL,
        rhs_without_slack,
        holds_without_slack: lhs <= rhs_without_slack + CHECK_TOL,
    })
}

/// Per-agent action counts whose joint action space has at most `max_joint`
/// entries.
pub fn random_action_counts<R: Rng + ?Sized>(max_joint: usize, rng: &mut R) -> Vec<usize> {
    loop {
        let n = rng.gen_range(1..=super::mdp::MAX_AGENTS);
        let counts: Vec<usize> = (0..n)
            .map(|_| rng.gen_range(1..=super::mdp::MAX_AGENT_ACTIONS))
            .collect();
        if counts.iter().product::<usize>() <= max_joint {
            return counts;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpperBoundTrials {
    pub trials: usize,
    pub failures: usize,
    pub failures_without_slack: usize,
    /// Smallest `rhs − lhs` seen and the instance it came from.
    pub min_margin: f64,
    pub witness: Option<(TinyMdp, AgentUtilities)>,
}

/// Random MDPs with at most `max_joint` joint actions and random additive
/// utilities.
pub fn upper_bound_trials<R: Rng + ?Sized>(trials: usize, max_joint: usize, rng: &mut R) -> Result<UpperBoundTrials> {
    let mut out = UpperBoundTrials {
        trials,
        failures: 0,
        failures_without_slack: 0,
        min_margin: f64::INFINITY,
        witness: None,
    };
    for _ in 0..trials {
        let counts = random_action_counts(max_joint, rng);
        let n_states = rng.gen_range(1..=8);
        let gamma = rng.gen_range(0.5..0.95);
        let mdp = TinyMdp::random(n_states, counts, gamma, rng)?;
        let scale = 10f64.powf(rng.gen_range(-1.0..1.0));
        let q_k = AgentUtilities::random(&mdp, scale, rng);
        let b = upper_bound_check(&mdp, &q_k)?;
        out.failures += usize::from(!b.holds);
        out.failures_without_slack += usize::from(!b.holds_without_slack);
        if b.rhs - b.lhs < out.min_margin {
            out.min_margin = b.rhs - b.lhs;
            out.witness = Some((mdp, q_k));
        }
    }
    Ok(out)
}
