use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExperimentError, Result};
use crate::env::{EnvSpec, PredatorPreyConfig};
use crate::factor::FactorConfig;
use crate::oracle::OracleConfig;
use crate::train::TrainConfig;
use crate::weighting::{SchemeConfig, SchemeRegistry, Term};

pub const DEFAULT_SEEDS: [u64; 3] = [0, 1, 2];
pub const PAPER_SCALE_SEEDS: [u64; 4] = [0, 1, 2, 3];
pub const PAPER_SCALE_STEPS: u64 = 1_000_000;

/// Everything a run or suite needs. An empty document resolves to the
/// default hyperparameters on the desk-scale Predator-Prey task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub scheme: SchemeConfig,
    pub train: TrainConfig,
    pub factor: FactorConfig,
    /// Empty means the suite's own default seeds.
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Suite tag recorded with the results.
    pub suite: Option<String>,
    /// Runs executed concurrently by the suite runner.
    pub jobs: usize,
    /// Keep seeds already completed under the same config hash instead of
    /// training them again.
    pub skip_completed: bool,
    pub oracle: OracleConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvSpec::default(),
            scheme: SchemeConfig::default(),
            train: TrainConfig::default(),
            factor: FactorConfig::default(),
            seeds: Vec::new(),
            out_dir: PathBuf::from("runs"),
            suite: None,
            jobs: 1,
            skip_completed: false,
            oracle: OracleConfig::default(),
        }
    }
}

/// Parses a JSON config. Unknown keys and type errors are reported with the
/// path of the offending field.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| ExperimentError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ExperimentError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Command-line overrides; each `Some` replaces the file value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub scheme: Option<String>,
    pub punishment: Option<f64>,
    pub w_min: Option<f64>,
    pub w_max: Option<f64>,
    pub seeds: Option<Vec<u64>>,
    pub steps: Option<u64>,
    pub paper_scale: bool,
    pub disable_terms: Vec<Term>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, config: &mut ExperimentConfig) -> Result<()> {
        if self.paper_scale {
            let p = match &config.env {
                EnvSpec::PredatorPrey(c) => c.punishment,
                EnvSpec::Matrix(_) => {
                    return Err(ExperimentError::Config(
                        "--paper-scale applies to predator_prey only".into(),
                    ));
                }
            };
            config.env = EnvSpec::PredatorPrey(PredatorPreyConfig::paper_scale(p));
            config.train.total_steps = PAPER_SCALE_STEPS;
            if config.seeds.is_empty() {
                config.seeds = PAPER_SCALE_SEEDS.to_vec();
            }
        }
        if let Some(s) = &self.scheme {
            config.scheme.apply_cli(s)?;
        }
        if let Some(p) = self.punishment {
            match &mut config.env {
                EnvSpec::PredatorPrey(c) => c.punishment = p,
                EnvSpec::Matrix(_) => {
                    return Err(ExperimentError::Config(
                        "--punishment applies to predator_prey only".into(),
                    ));
                }
            }
        }
        if let Some(w) = self.w_min {
            config.scheme.w_min = w;
        }
        if let Some(w) = self.w_max {
            config.scheme.w_max = w;
        }
        if let Some(seeds) = &self.seeds {
            config.seeds = seeds.clone();
        }
        if let Some(steps) = self.steps {
            config.train.total_steps = steps;
        }
        for t in &self.disable_terms {
            if !config.scheme.disabled_terms.contains(t) {
                config.scheme.disabled_terms.push(*t);
            }
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        Ok(())
    }
}

/// Parses `--seeds` values: `0,1,2` or a range `0..5`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || ExperimentError::Config(format!("cannot parse seeds `{text}`; use `0,1,2` or `0..3`"));
    if let Some((a, b)) = text.split_once("..") {
        let (a, b): (u64, u64) = (
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        );
        return Ok((a..b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

impl ExperimentConfig {
    /// Checks everything that can be checked without running: scheme name
    /// and parameters, environment, training values and seeds.
    pub fn validate(&self) -> Result<()> {
        SchemeRegistry::with_builtins().build(&self.scheme)?;
        self.env.build()?;
        self.train
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        let mut seen = std::collections::BTreeSet::new();
        if let Some(s) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(ExperimentError::Config(format!("seed {s} appears twice")));
        }
        if self.jobs == 0 {
            return Err(ExperimentError::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn seeds_or(&self, default: &[u64]) -> Vec<u64> {
        if self.seeds.is_empty() {
            default.to_vec()
        } else {
            self.seeds.clone()
        }
    }

    /// The parts that determine a run's results, without seeds or paths.
    pub fn run_spec(&self) -> RunSpec {
        RunSpec {
            env: self.env.clone(),
            scheme: self.scheme.clone(),
            train: self.train.clone(),
            factor: self.factor.clone(),
        }
    }
}

/// What one seed of a run is trained with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub env: EnvSpec,
    pub scheme: SchemeConfig,
    pub train: TrainConfig,
    pub factor: FactorConfig,
}
