//! Exact checks on tiny instances: discounted distributions and regret by
//! dense linear solves, the Boltzmann gap, the convexity relaxation, the
//! relaxed regret bound, and a brute-force search over projection weights.

mod bounds;
mod mdp;
mod search;

pub use bounds::{
    boltzmann_gap, boltzmann_gap_check, jensen_check, jensen_trials, random_action_counts, upper_bound_check,
    upper_bound_trials, GapCheck, JensenCheck, JensenTrials, UpperBound, UpperBoundTrials, CHECK_TOL,
};
pub use mdp::{
    discounted_distribution, discounted_state_distribution, exact_regret, exact_return, onpoliciness_ratio,
    policy_values, value_iteration, AgentUtilities, ExactPolicy, ExactReturn, OptimalSolution, TinyMdp, MAX_AGENTS,
    MAX_AGENT_ACTIONS, MAX_STATES, VALUE_ITERATION_TOL,
};
pub use search::{
    closed_form_scores, exhaustive_weight_search, grid_weights, one_shot_regret, project, spearman, Projection,
    TabularMixer, WeightSearchConfig, WeightSearchResult, MAX_JOINT_ACTIONS,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::MatrixGameConfig;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid oracle input: {0}")]
    Invalid(String),
    #[error("singular linear system in {0}")]
    Singular(&'static str),
    #[error("none of the {0} weight-grid projections converged")]
    NoConvergence(usize),
}

pub type Result<T, E = OracleError> = std::result::Result<T, E>;

/// Regret improvement the weight search must beat uniform weights by.
pub const SEARCH_MARGIN: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub seed: u64,
    pub gap_trials: usize,
    pub gap_max_actions: usize,
    pub jensen_trials: usize,
    pub upper_bound_trials: usize,
    /// Joint action spaces in the bound trials stay within the range where
    /// the Boltzmann gap is below 1.
    pub upper_bound_max_joint: usize,
    pub onpoliciness_instances: usize,
    pub game: MatrixGameConfig,
    pub search: WeightSearchConfig,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            gap_trials: 100_000,
            gap_max_actions: 8,
            jensen_trials: 10_000,
            upper_bound_trials: 200,
            upper_bound_max_joint: 8,
            onpoliciness_instances: 20,
            game: MatrixGameConfig::default(),
            search: WeightSearchConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: serde_json::Value,
}

/// Spread of `d^π/μ` under a uniform buffer on random instances, and how
/// far it moves the closed-form ranking on the default game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnpolicinessSummary {
    pub instances: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// Rank correlation of the closed-form scores with and without the
    /// ratio, at the uniform-weight projection of the game.
    pub game_rank_correlation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub passed: bool,
    pub checks: Vec<CheckOutcome>,
    pub boltzmann_gap: GapCheck,
    pub jensen: JensenTrials,
    pub upper_bound: UpperBoundTrials,
    pub weight_search: WeightSearchResult,
    pub onpoliciness: OnpolicinessSummary,
}

pub fn boltzmann_gap_outcome(c: &GapCheck) -> CheckOutcome {
    CheckOutcome {
        name: "boltzmann_gap".into(),
        passed: c.holds,
        detail: serde_json::json!({ "trials": c.trials, "max_gap": c.max_gap }),
    }
}

pub fn jensen_outcome(c: &JensenTrials) -> CheckOutcome {
    CheckOutcome {
        name: "jensen".into(),
        passed: c.failures == 0,
        detail: serde_json::json!({ "trials": c.trials, "failures": c.failures, "max_violation": c.max_violation }),
    }
}

pub fn upper_bound_outcome(c: &UpperBoundTrials) -> CheckOutcome {
    CheckOutcome {
        name: "upper_bound".into(),
        passed: c.failures == 0,
        detail: serde_json::json!({
            "trials": c.trials,
            "failures": c.failures,
            "failures_without_slack": c.failures_without_slack,
            "min_margin": c.min_margin,
        }),
    }
}

pub fn weight_search_outcome(r: &WeightSearchResult) -> CheckOutcome {
    CheckOutcome {
        name: "weight_search".into(),
        passed: r.improvement() >= SEARCH_MARGIN && r.spearman.is_some_and(|s| s > 0.0),
        detail: serde_json::json!({
            "uniform_regret": r.uniform_regret,
            "best_regret": r.best_regret,
            "best_weights": r.best_weights,
            "spearman": r.spearman,
            "non_converged": r.non_converged,
        }),
    }
}

pub fn onpoliciness_summary<R: Rng + ?Sized>(
    instances: usize,
    game: &MatrixGameConfig,
    search: &WeightSearchConfig,
    rng: &mut R,
) -> Result<OnpolicinessSummary> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..instances {
        let counts = random_action_counts(8, rng);
        let n_states = rng.gen_range(2..=8);
        let mdp = TinyMdp::random(n_states, counts, 0.9, rng)?;
        let pi = ExactPolicy::random(&mdp, rng);
        let cells = mdp.n_states() * mdp.n_joint();
        let ratio = onpoliciness_ratio(&mdp, &pi, &vec![1.0 / cells as f64; cells])?;
        for r in ratio {
            lo = lo.min(r);
            hi = hi.max(r);
        }
    }
    let n = game.n_joint();
    let uniform = vec![1.0 / n as f64; n];
    let projection = project(game, &uniform, search)?;
    let with = closed_form_scores(game, &projection, &uniform);
    let pi = projection.mixer.policies();
    let without: Vec<f64> = with
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let joint = game.joint_action(i);
            let p: f64 = joint.iter().enumerate().map(|(a, &ua)| pi[a][ua]).product();
            s / (p * n as f64)
        })
        .collect();
    Ok(OnpolicinessSummary {
        instances,
        min_ratio: lo,
        max_ratio: hi,
        game_rank_correlation: spearman(&with, &without),
    })
}

/// Runs every check with one seed and gathers the results.
pub fn run_oracle_checks(config: &OracleConfig) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let boltzmann_gap = boltzmann_gap_check(config.gap_trials, config.gap_max_actions, &mut rng);
    let jensen = jensen_trials(config.jensen_trials, &mut rng);
    let upper_bound = upper_bound_trials(config.upper_bound_trials, config.upper_bound_max_joint, &mut rng)?;
    let onpoliciness = onpoliciness_summary(config.onpoliciness_instances, &config.game, &config.search, &mut rng)?;
    let weight_search = exhaustive_weight_search(&config.game, &config.search)?;
    let checks = vec![
        boltzmann_gap_outcome(&boltzmann_gap),
        jensen_outcome(&jensen),
        upper_bound_outcome(&upper_bound),
        weight_search_outcome(&weight_search),
    ];
    Ok(OracleReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
        boltzmann_gap,
        jensen,
        upper_bound,
        weight_search,
        onpoliciness,
    })
}
