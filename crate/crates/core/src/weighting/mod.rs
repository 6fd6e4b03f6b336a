//! Per-transition weights for the projection of the Bellman target onto the
//! monotonic value class.
//!
//! Schemes implement [`WeightScheme`] and are constructed by name through a
//! [`SchemeRegistry`], so configs and the command line can select them at
//! runtime.

mod histogram;
mod schemes;

pub use histogram::{bin_index, histogram_from_counts, histogram_record, HistogramRecord, HIST_BINS, LOG_PROB_FLOOR};
pub use schemes::{normalize_weights, remix_raw_weights, CentralWeight, OptimisticWeight, RemixWeight, Uniform};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum WeightError {
    #[error("unknown weighting scheme `{name}`; valid schemes: {}", valid.join(", "))]
    UnknownScheme { name: String, valid: Vec<String> },
    #[error("invalid {field} = {value}: {reason}")]
    Invalid {
        field: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("cannot parse scheme `{0}`; expected a name such as `remix` or `ow(0.1)`")]
    Syntax(String),
}

/// Everything the schemes may look at, for a batch of `len` transitions and
/// `n_agents` agents. Per-agent fields are `len × n_agents` row-major.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchEval {
    pub n_agents: usize,
    /// `Q_tot(τ, u)` of the stored joint action.
    pub q_tot: Vec<f64>,
    /// Bellman target `y`.
    pub target: Vec<f64>,
    /// Unrestricted estimate `Q̂*(τ, u)` of the stored joint action.
    pub q_star: Vec<f64>,
    /// Boltzmann probability each agent assigns to its stored action.
    pub pi: Vec<f64>,
    /// Mixer gradient `∂Q_tot/∂Q^j` at the stored action.
    pub f_grad: Vec<f64>,
    /// The stored joint action equals the current greedy joint action.
    pub greedy_match: Vec<bool>,
}

impl BatchEval {
    pub fn len(&self) -> usize {
        self.q_tot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q_tot.is_empty()
    }
}

/// Weights for one batch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightVector {
    /// Scheme output before any range mapping; non-negative.
    pub raw: Vec<f64>,
    /// The weights applied in the loss.
    pub normalized: Vec<f64>,
    /// Transitions that took the overestimation (`Q_tot > y`) branch.
    pub zero_mask: Vec<bool>,
    /// Transitions whose raw weight was non-finite and forced to 0.
    pub non_finite: Vec<usize>,
    /// Transitions whose gradient bracket was negative and clamped to 0.
    pub bracket_clamped: usize,
}

impl WeightVector {
    /// A scheme without range mapping: normalized = raw.
    pub fn unnormalized(raw: Vec<f64>) -> Self {
        Self {
            zero_mask: vec![false; raw.len()],
            normalized: raw.clone(),
            raw,
            ..Self::default()
        }
    }

    pub fn raw_mean(&self) -> f64 {
        if self.raw.is_empty() {
            return 0.0;
        }
        self.raw.iter().sum::<f64>() / self.raw.len() as f64
    }

    pub fn raw_zero_frac(&self) -> f64 {
        if self.raw.is_empty() {
            return 0.0;
        }
        self.raw.iter().filter(|&&w| w == 0.0).count() as f64 / self.raw.len() as f64
    }
}

pub trait WeightScheme: Send + Sync {
    /// Registry name, e.g. `remix`.
    fn name(&self) -> &'static str;

    fn weights(&self, batch: &BatchEval) -> WeightVector;
}

/// The terms of the closed-form weight that ablations can switch off.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    /// The Bellman error `y − Q_tot`.
    Bellman,
    /// The underestimation factor `exp(Q̂* − Q_tot)`.
    Underestimate,
    /// The mixer-gradient bracket `Σ_j (1 − π^j)/f'_j − 1`.
    Gradient,
}

impl Term {
    pub const ALL: [Term; 3] = [Term::Bellman, Term::Underestimate, Term::Gradient];

    pub fn as_str(self) -> &'static str {
        match self {
            Term::Bellman => "bellman",
            Term::Underestimate => "underestimate",
            Term::Gradient => "gradient",
        }
    }

    pub fn parse(s: &str) -> Option<Term> {
        Term::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

/// Scheme selection plus every scheme parameter; each scheme reads only the
/// fields it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemeConfig {
    pub name: String,
    /// Down-weighting constant for `ow` and `cw`.
    pub alpha: f64,
    pub w_min: f64,
    pub w_max: f64,
    pub exp_clamp: f64,
    pub grad_floor: f64,
    pub disabled_terms: Vec<Term>,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            name: "remix".into(),
            alpha: 0.1,
            w_min: 0.1,
            w_max: 1.0,
            exp_clamp: 20.0,
            grad_floor: 1e-6,
            disabled_terms: Vec::new(),
        }
    }
}

impl SchemeConfig {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.into(),
            ..Self::default()
        }
    }

    /// Applies a command-line scheme string: a bare name (`cw`) or a name
    /// with its alpha (`ow(0.1)`).
    pub fn apply_cli(&mut self, spec: &str) -> Result<(), WeightError> {
        let spec = spec.trim();
        match spec.split_once('(') {
            None => self.name = spec.to_string(),
            Some((name, rest)) => {
                let arg = rest.strip_suffix(')').ok_or_else(|| WeightError::Syntax(spec.into()))?;
                self.alpha = arg.trim().parse().map_err(|_| WeightError::Syntax(spec.into()))?;
                self.name = name.trim().to_string();
            }
        }
        Ok(())
    }

    pub fn term_enabled(&self, t: Term) -> bool {
        !self.disabled_terms.contains(&t)
    }

    /// Short label for run directories, e.g. `remix-wmin0.5-no-bellman`.
    pub fn label(&self) -> String {
        let mut s = match self.name.as_str() {
            "ow" | "cw" => format!("{}{}", self.name, self.alpha),
            "remix" => {
                let mut s = "remix".to_string();
                if self.w_min != 0.1 || self.w_max != 1.0 {
                    s.push_str(&format!("-wmin{}-wmax{}", self.w_min, self.w_max));
                }
                s
            }
            other => other.to_string(),
        };
        for t in &self.disabled_terms {
            s.push_str("-no-");
            s.push_str(t.as_str());
        }
        s
    }
}

type Factory = fn(&SchemeConfig) -> Result<Box<dyn WeightScheme>, WeightError>;

/// Name → constructor table for weighting schemes.
pub struct SchemeRegistry {
    factories: BTreeMap<&'static str, Factory>,
}

impl Default for SchemeRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl SchemeRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// `uniform`, `ow`, `cw` and `remix`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("uniform", |_| Ok(Box::new(Uniform)));
        r.register("ow", |c| Ok(Box::new(OptimisticWeight::new(c.alpha)?)));
        r.register("cw", |c| Ok(Box::new(CentralWeight::new(c.alpha)?)));
        r.register("remix", |c| Ok(Box::new(RemixWeight::from_config(c)?)));
        r
    }

    pub fn register(&mut self, name: &'static str, factory: Factory) {
        self.factories.insert(name, factory);
    }

    /// Registered names in the order they were documented.
    pub fn names(&self) -> Vec<String> {
        let order = ["uniform", "ow", "cw", "remix"];
        let mut names: Vec<String> = order
            .iter()
            .filter(|n| self.factories.contains_key(*n))
            .map(|n| n.to_string())
            .collect();
        names.extend(
            self.factories
                .keys()
                .filter(|k| !order.contains(k))
                .map(|k| k.to_string()),
        );
        names
    }

    pub fn build(&self, config: &SchemeConfig) -> Result<Box<dyn WeightScheme>, WeightError> {
        let factory = self
            .factories
            .get(config.name.as_str())
            .ok_or_else(|| WeightError::UnknownScheme {
                name: config.name.clone(),
                valid: self.names(),
            })?;
        factory(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_builds_every_builtin() {
        let reg = SchemeRegistry::with_builtins();
        for name in ["uniform", "ow", "cw", "remix"] {
            assert_eq!(reg.build(&SchemeConfig::named(name)).unwrap().name(), name);
        }
    }

    #[test]
    fn unknown_scheme_lists_valid_names() {
        let err = SchemeRegistry::with_builtins()
            .build(&SchemeConfig::named("qplex"))
            .err()
            .unwrap();
        let msg = err.to_string();
        for name in ["uniform", "ow", "cw", "remix"] {
            assert!(msg.contains(name), "{msg}");
        }
    }

    #[test]
    fn cli_scheme_strings() {
        let mut c = SchemeConfig::default();
        c.apply_cli("ow(0.25)").unwrap();
        assert_eq!((c.name.as_str(), c.alpha), ("ow", 0.25));
        c.apply_cli("uniform").unwrap();
        assert_eq!(c.name, "uniform");
        assert!(c.apply_cli("cw(x)").is_err());
        assert!(c.apply_cli("cw(0.1").is_err());
    }

    #[test]
    fn custom_schemes_can_be_registered() {
        struct Half;
        impl WeightScheme for Half {
            fn name(&self) -> &'static str {
                "half"
            }
            fn weights(&self, b: &BatchEval) -> WeightVector {
                WeightVector::unnormalized(vec![0.5; b.len()])
            }
        }
        let mut reg = SchemeRegistry::with_builtins();
        reg.register("half", |_| Ok(Box::new(Half)));
        assert_eq!(reg.names().last().unwrap(), "half");
        let w = reg.build(&SchemeConfig::named("half")).unwrap();
        let batch = BatchEval {
            q_tot: vec![0.0; 3],
            ..BatchEval::default()
        };
        assert_eq!(w.weights(&batch).normalized, vec![0.5; 3]);
    }

    #[test]
    fn labels() {
        assert_eq!(SchemeConfig::named("uniform").label(), "uniform");
        assert_eq!(SchemeConfig::named("ow").label(), "ow0.1");
        let mut c = SchemeConfig::named("remix");
        c.w_min = 0.5;
        c.disabled_terms = vec![Term::Gradient];
        assert_eq!(c.label(), "remix-wmin0.5-wmax1-no-gradient");
    }
}
