use super::{BatchEval, SchemeConfig, Term, WeightError, WeightScheme, WeightVector};

fn check_alpha(alpha: f64) -> Result<(), WeightError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(WeightError::Invalid {
            field: "alpha",
            value: alpha,
            reason: "must lie in (0, 1]",
        });
    }
    Ok(())
}

/// All-ones weights: the unweighted projection.
#[derive(Clone, Copy, Debug, Default)]
pub struct Uniform;

impl WeightScheme for Uniform {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn weights(&self, batch: &BatchEval) -> WeightVector {
        WeightVector::unnormalized(vec![1.0; batch.len()])
    }
}

/// Full weight on underestimated transitions (`Q_tot < y`), `alpha` elsewhere.
#[derive(Clone, Copy, Debug)]
pub struct OptimisticWeight {
    pub alpha: f64,
}

impl OptimisticWeight {
    pub fn new(alpha: f64) -> Result<Self, WeightError> {
        check_alpha(alpha)?;
        Ok(Self { alpha })
    }
}

impl WeightScheme for OptimisticWeight {
    fn name(&self) -> &'static str {
        "ow"
    }

    fn weights(&self, b: &BatchEval) -> WeightVector {
        let raw = b
            .q_tot
            .iter()
            .zip(&b.target)
            .map(|(q, y)| if q < y { 1.0 } else { self.alpha })
            .collect();
        WeightVector::unnormalized(raw)
    }
}

/// Full weight when the stored joint action is the current greedy one or
/// the transition is underestimated, `alpha` elsewhere.
#[derive(Clone, Copy, Debug)]
pub struct CentralWeight {
    pub alpha: f64,
}

impl CentralWeight {
    pub fn new(alpha: f64) -> Result<Self, WeightError> {
        check_alpha(alpha)?;
        Ok(Self { alpha })
    }
}

impl WeightScheme for CentralWeight {
    fn name(&self) -> &'static str {
        "cw"
    }

    fn weights(&self, b: &BatchEval) -> WeightVector {
        let raw = b
            .q_tot
            .iter()
            .zip(&b.target)
            .zip(&b.greedy_match)
            .map(|((q, y), &greedy)| if greedy || q < y { 1.0 } else { self.alpha })
            .collect();
        WeightVector::unnormalized(raw)
    }
}

/// The closed-form optimal projection weight, range-normalized per batch.
#[derive(Clone, Debug)]
pub struct RemixWeight {
    pub w_min: f64,
    pub w_max: f64,
    pub exp_clamp: f64,
    pub grad_floor: f64,
    pub bellman: bool,
    pub underestimate: bool,
    pub gradient: bool,
}

impl RemixWeight {
    pub fn from_config(c: &SchemeConfig) -> Result<Self, WeightError> {
        if !(c.w_min > 0.0) {
            return Err(WeightError::Invalid {
                field: "w_min",
                value: c.w_min,
                reason: "must be positive",
            });
        }
        if !(c.w_max >= c.w_min) || !c.w_max.is_finite() {
            return Err(WeightError::Invalid {
                field: "w_max",
                value: c.w_max,
                reason: "must be finite and at least w_min",
            });
        }
        if !(c.grad_floor > 0.0) {
            return Err(WeightError::Invalid {
                field: "grad_floor",
                value: c.grad_floor,
                reason: "must be positive",
            });
        }
        if !(c.exp_clamp > 0.0) {
            return Err(WeightError::Invalid {
                field: "exp_clamp",
                value: c.exp_clamp,
                reason: "must be positive",
            });
        }
        Ok(Self {
            w_min: c.w_min,
            w_max: c.w_max,
            exp_clamp: c.exp_clamp,
            grad_floor: c.grad_floor,
            bellman: c.term_enabled(Term::Bellman),
            underestimate: c.term_enabled(Term::Underestimate),
            gradient: c.term_enabled(Term::Gradient),
        })
    }
}

impl WeightScheme for RemixWeight {
    fn name(&self) -> &'static str {
        "remix"
    }

    fn weights(&self, b: &BatchEval) -> WeightVector {
        let mut w = remix_raw_weights(b, self);
        w.normalized = normalize_weights(&w.raw, self.w_min, self.w_max);
        w
    }
}

/// Raw closed-form weights. On the underestimation branch (`Q_tot ≤ y`):
///
/// `(y − Q_tot) · exp(clamp(Q̂* − Q_tot)) · max(Σ_j (1 − π^j)/max(f'_j, floor) − 1, 0)`
///
/// and 0 with `zero_mask` set when `Q_tot > y`. A disabled term is replaced
/// by 1; disabling the Bellman term also removes the sign branch, since the
/// branch is the positive part of that same factor.
pub fn remix_raw_weights(b: &BatchEval, p: &RemixWeight) -> WeightVector {
    let n = b.n_agents;
    let len = b.len();
    let mut out = WeightVector {
        raw: Vec::with_capacity(len),
        zero_mask: vec![false; len],
        ..WeightVector::default()
    };
    for i in 0..len {
        let (q, y) = (b.q_tot[i], b.target[i]);
        if p.bellman && q > y {
            out.zero_mask[i] = true;
            out.raw.push(0.0);
            continue;
        }
        let bellman = if p.bellman { y - q } else { 1.0 };
        let under = if p.underestimate {
            (b.q_star[i] - q).clamp(-p.exp_clamp, p.exp_clamp).exp()
        } else {
            1.0
        };
        let grad = if p.gradient {
            let s: f64 = (0..n)
                .map(|j| (1.0 - b.pi[i * n + j]) / b.f_grad[i * n + j].max(p.grad_floor))
                .sum();
            let bracket = s - 1.0;
            if bracket < 0.0 {
                out.bracket_clamped += 1;
            }
            bracket.max(0.0)
        } else {
            1.0
        };
        let w = bellman * under * grad;
        if w.is_finite() {
            out.raw.push(w);
        } else {
            out.non_finite.push(i);
            out.raw.push(0.0);
        }
    }
    out
}

/// Min-max maps the strictly positive raw weights onto `[w_min, w_max]`.
/// Zero raws map to `w_min`; if every positive raw is equal they map to
/// `w_max`.
pub fn normalize_weights(raw: &[f64], w_min: f64, w_max: f64) -> Vec<f64> {
    let (lo, hi) = raw
        .iter()
        .filter(|&&r| r > 0.0)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
            (lo.min(r), hi.max(r))
        });
    raw.iter()
        .map(|&r| {
            if !(r > 0.0) {
                w_min
            } else if hi <= lo {
                w_max
            } else {
                (w_min + (w_max - w_min) * (r - lo) / (hi - lo)).clamp(w_min, w_max)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn remix() -> RemixWeight {
        RemixWeight::from_config(&SchemeConfig::default()).unwrap()
    }

    fn single(q: f64, y: f64, q_star: f64, pi: &[f64], f: &[f64]) -> BatchEval {
        BatchEval {
            n_agents: pi.len(),
            q_tot: vec![q],
            target: vec![y],
            q_star: vec![q_star],
            pi: pi.to_vec(),
            f_grad: f.to_vec(),
            greedy_match: vec![false],
        }
    }

    #[test]
    fn ow_examples() {
        let ow = OptimisticWeight::new(0.1).unwrap();
        let b = single(3.0, 5.0, 0.0, &[], &[]);
        assert_eq!(ow.weights(&b).normalized, vec![1.0]);
        let b = single(5.0, 5.0, 0.0, &[], &[]);
        assert_eq!(ow.weights(&b).normalized, vec![0.1]);
        assert!(OptimisticWeight::new(0.0).is_err());
        assert!(OptimisticWeight::new(1.5).is_err());
    }

    #[test]
    fn cw_truth_table() {
        let cw = CentralWeight::new(0.1).unwrap();
        for greedy in [false, true] {
            for (q, y) in [(1.0, 2.0), (2.0, 2.0), (3.0, 2.0)] {
                let mut b = single(q, y, 0.0, &[], &[]);
                b.greedy_match = vec![greedy];
                let expected = if greedy || q < y { 1.0 } else { 0.1 };
                assert_eq!(cw.weights(&b).normalized, vec![expected], "greedy={greedy} q={q} y={y}");
            }
        }
    }

    #[test]
    fn remix_examples() {
        let p = remix();
        // zero Bellman error
        assert_eq!(
            remix_raw_weights(&single(2.0, 2.0, 9.0, &[0.1, 0.2], &[0.5, 0.5]), &p).raw,
            vec![0.0]
        );
        // overestimation branch
        let w = remix_raw_weights(&single(5.0, 4.0, 9.0, &[0.1, 0.2], &[0.5, 0.5]), &p);
        assert_eq!(w.raw, vec![0.0]);
        assert_eq!(w.zero_mask, vec![true]);
        // 1 · e^0 · (0.5 + 0.5 − 1) = 0
        let w = remix_raw_weights(&single(0.0, 1.0, 0.0, &[0.5, 0.5], &[1.0, 1.0]), &p);
        assert_eq!(w.raw, vec![0.0]);
        assert_eq!(w.zero_mask, vec![false]);
        // 2 · e^1 · ((1−0.5)/0.25 + (1−0.5)/0.25 − 1) = 2e · 3
        let w = remix_raw_weights(&single(1.0, 3.0, 2.0, &[0.5, 0.5], &[0.25, 0.25]), &p);
        assert!((w.raw[0] - 6.0 * std::f64::consts::E).abs() < 1e-12);
    }

    #[test]
    fn negative_bracket_is_clamped_and_counted() {
        let w = remix_raw_weights(&single(0.0, 1.0, 0.0, &[0.9, 0.9], &[1.0, 1.0]), &remix());
        assert_eq!(w.raw, vec![0.0]);
        assert_eq!(w.bracket_clamped, 1);
    }

    #[test]
    fn gradient_floor_applies() {
        let w = remix_raw_weights(&single(0.0, 1.0, 0.0, &[0.0], &[0.0]), &remix());
        assert!((w.raw[0] - (1e6 - 1.0)).abs() < 1e-6);
    }

    #[test]
    fn non_finite_is_zeroed_and_reported() {
        let w = remix_raw_weights(&single(0.0, f64::INFINITY, 0.0, &[0.0], &[1.0]), &remix());
        assert_eq!(w.raw, vec![0.0]);
        assert_eq!(w.non_finite, vec![0]);
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_weights(&[0.0, 1.0, 2.0], 0.1, 1.0), vec![0.1, 0.1, 1.0]);
        assert_eq!(normalize_weights(&[3.0, 3.0], 0.1, 1.0), vec![1.0, 1.0]);
        assert_eq!(normalize_weights(&[0.0, 0.0], 0.1, 1.0), vec![0.1, 0.1]);
        let out = normalize_weights(&[0.0, 1.0, 1.5, 2.0], 0.5, 0.5 + 1e-12);
        assert!(out.iter().all(|&w| (0.5..=0.5 + 1e-12).contains(&w)));
    }

    #[test]
    fn all_terms_disabled_is_batch_constant() {
        let c = SchemeConfig {
            disabled_terms: Term::ALL.to_vec(),
            ..SchemeConfig::default()
        };
        let p = RemixWeight::from_config(&c).unwrap();
        let b = BatchEval {
            n_agents: 1,
            q_tot: vec![0.0, 5.0, -2.0],
            target: vec![1.0, 1.0, 1.0],
            q_star: vec![0.0, 3.0, 1.0],
            pi: vec![0.2, 0.5, 0.9],
            f_grad: vec![1.0, 0.1, 3.0],
            greedy_match: vec![false; 3],
        };
        assert_eq!(p.weights(&b).normalized, vec![1.0; 3]);
    }

    #[test]
    fn remix_config_validation() {
        let bad = |f: fn(&mut SchemeConfig)| {
            let mut c = SchemeConfig::default();
            f(&mut c);
            RemixWeight::from_config(&c).is_err()
        };
        assert!(bad(|c| c.w_min = 0.0));
        assert!(bad(|c| c.w_max = 0.05));
        assert!(bad(|c| c.grad_floor = 0.0));
        assert!(bad(|c| c.exp_clamp = -1.0));
    }
}
