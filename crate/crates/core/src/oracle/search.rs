use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use nalgebra::{DMatrix, DVector};

use super::mdp::softmax;
use super::{OracleError, Result};
use crate::env::MatrixGameConfig;
use crate::tensor::{elu, elu_grad};

pub const MAX_JOINT_ACTIONS: usize = 9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightSearchConfig {
    /// Each weight takes a level in `1..=resolution` before normalization;
    /// 1 gives the single uniform point.
    pub resolution: usize,
    pub mixer_width: usize,
    pub max_steps: usize,
    pub initial_damping: f64,
    pub grad_tol: f64,
    /// L2 penalty on all projection parameters.
    pub ridge: f64,
    /// Seeds the shared initial parameters of every projection.
    pub seed: u64,
    /// Worker threads; 0 uses the available parallelism.
    pub threads: usize,
}

impl Default for WeightSearchConfig {
    fn default() -> Self {
        Self {
            resolution: 2,
            mixer_width: 4,
            max_steps: 10_000,
            initial_damping: 1e-3,
            grad_tol: 1e-8,
            ridge: 0.0,
            seed: 0,
            threads: 0,
        }
    }
}

/// Tabular per-agent utilities mixed by a two-layer monotonic network.
/// Mixer weights are stored as square roots (`W = v²`), which keeps them
/// non-negative while leaving the loss differentiable at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularMixer {
    pub n_agents: usize,
    pub n_actions: usize,
    pub width: usize,
    /// `[n_agents × n_actions]`.
    pub utilities: Vec<f64>,
    /// `[n_agents × width]`.
    pub w1_root: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2_root: Vec<f64>,
    pub b2: f64,
}

struct Forward {
    pre: Vec<f64>,
    q_tot: f64,
}

impl TabularMixer {
    pub fn init<R: Rng + ?Sized>(n_agents: usize, n_actions: usize, width: usize, rng: &mut R) -> Self {
        Self {
            n_agents,
            n_actions,
            width,
            utilities: (0..n_agents * n_actions).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            w1_root: (0..n_agents * width).map(|_| rng.gen_range(0.3..1.0)).collect(),
            b1: (0..width).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            w2_root: (0..width).map(|_| rng.gen_range(0.3..1.0)).collect(),
            b2: 0.0,
        }
    }

    fn n_params(&self) -> usize {
        self.utilities.len() + self.w1_root.len() + self.b1.len() + self.w2_root.len() + 1
    }

    fn utility(&self, agent: usize, action: usize) -> f64 {
        self.utilities[agent * self.n_actions + action]
    }

    fn forward(&self, joint: &[usize]) -> Forward {
        let m = self.width;
        let mut pre = self.b1.clone();
        for (a, &ua) in joint.iter().enumerate() {
            let q = self.utility(a, ua);
            for (p, r) in pre.iter_mut().zip(&self.w1_root[a * m..(a + 1) * m]) {
                *p += q * r * r;
            }
        }
        let q_tot = pre
            .iter()
            .zip(&self.w2_root)
            .map(|(&x, r)| elu(x, 1.0) * r * r)
            .sum::<f64>()
            + self.b2;
        Forward { pre, q_tot }
    }

    pub fn q_tot(&self, joint: &[usize]) -> f64 {
        self.forward(joint).q_tot
    }

    /// `∂Q_tot/∂Q^a` at a joint action.
    pub fn mixing_gradient(&self, joint: &[usize]) -> Vec<f64> {
        let m = self.width;
        let pre = self.forward(joint).pre;
        (0..self.n_agents)
            .map(|a| {
                (0..m)
                    .map(|j| {
                        let w1 = self.w1_root[a * m + j].powi(2);
                        elu_grad(pre[j], 1.0) * w1 * self.w2_root[j].powi(2)
                    })
                    .sum()
            })
            .collect()
    }

    /// Per-agent Boltzmann policies over the utilities.
    pub fn policies(&self) -> Vec<Vec<f64>> {
        self.utilities.chunks(self.n_actions).map(softmax).collect()
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.utilities
            .iter()
            .chain(&self.w1_root)
            .chain(&self.b1)
            .chain(&self.w2_root)
            .chain(std::iter::once(&self.b2))
    }

    /// `∂Q_tot(joint)/∂θ` in parameter order (utilities, w1, b1, w2, b2).
    fn jacobian_row(&self, joint: &[usize], out: &mut [f64]) -> f64 {
        let (na, m) = (self.n_agents * self.n_actions, self.width);
        let (o_w1, o_b1) = (na, na + self.n_agents * m);
        let (o_w2, o_b2) = (o_b1 + m, o_b1 + 2 * m);
        out.iter_mut().for_each(|x| *x = 0.0);
        let f = self.forward(joint);
        out[o_b2] = 1.0;
        for j in 0..m {
            let r2 = self.w2_root[j];
            out[o_w2 + j] = elu(f.pre[j], 1.0) * 2.0 * r2;
            let dpre = r2 * r2 * elu_grad(f.pre[j], 1.0);
            out[o_b1 + j] = dpre;
            for (a, &ua) in joint.iter().enumerate() {
                let r1 = self.w1_root[a * m + j];
                out[o_w1 + a * m + j] = dpre * self.utility(a, ua) * 2.0 * r1;
                out[a * self.n_actions + ua] += dpre * r1 * r1;
            }
        }
        f.q_tot
    }

    /// Weighted squared error `Σ_u ω_u (Q_tot(u) − r_u)² + ridge·|θ|²` and
    /// its gradient in parameter order.
    fn loss_and_grad(
        &self,
        joints: &[Vec<usize>],
        targets: &[f64],
        weights: &[f64],
        ridge: f64,
        grad: &mut [f64],
    ) -> f64 {
        let mut loss = 0.0;
        for (g, p) in grad.iter_mut().zip(self.params()) {
            *g = 2.0 * ridge * p;
            loss += ridge * p * p;
        }
        let mut row = vec![0.0; grad.len()];
        for ((joint, &y), &w) in joints.iter().zip(targets).zip(weights) {
            let err = self.jacobian_row(joint, &mut row) - y;
            loss += w * err * err;
            for (g, d) in grad.iter_mut().zip(&row) {
                *g += 2.0 * w * err * d;
            }
        }
        loss
    }

    fn apply_step(&mut self, grad: &[f64], step: f64) {
        let params = self
            .utilities
            .iter_mut()
            .chain(self.w1_root.iter_mut())
            .chain(self.b1.iter_mut())
            .chain(self.w2_root.iter_mut())
            .chain(std::iter::once(&mut self.b2));
        for (p, g) in params.zip(grad) {
            *p -= step * g;
        }
    }
}

/// Outcome of one full-batch weighted projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub mixer: TabularMixer,
    pub steps: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub converged: bool,
}

fn joint_actions(game: &MatrixGameConfig) -> Vec<Vec<usize>> {
    (0..game.n_joint()).map(|i| game.joint_action(i)).collect()
}

fn check_game(game: &MatrixGameConfig) -> Result<()> {
    game.validate().map_err(|e| OracleError::Invalid(e.to_string()))?;
    if game.n_joint() > MAX_JOINT_ACTIONS {
        return Err(OracleError::Invalid(format!(
            "{} joint actions; the search handles at most {MAX_JOINT_ACTIONS}",
            game.n_joint()
        )));
    }
    Ok(())
}

/// Damped Newton iterations on the weighted projection of the payoff
/// table, from the initial parameters fixed by `config.seed`. Stops when the
/// gradient norm drops below `config.grad_tol`.
pub fn project(game: &MatrixGameConfig, weights: &[f64], config: &WeightSearchConfig) -> Result<Projection> {
    check_game(game)?;
    if weights.len() != game.n_joint() || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(OracleError::Invalid(
            "one non-negative weight per joint action is required".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut mixer = TabularMixer::init(game.n_agents, game.n_actions, config.mixer_width, &mut rng);
    let joints = joint_actions(game);
    let p = mixer.n_params();
    let mut grad = vec![0.0; p];
    let mut loss = mixer.loss_and_grad(&joints, &game.payoff, weights, config.ridge, &mut grad);
    let mut damping = config.initial_damping;
    let mut steps = 0;
    loop {
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let converged = grad_norm < config.grad_tol && loss.is_finite();
        if converged || steps >= config.max_steps || !grad_norm.is_finite() {
            return Ok(Projection {
                mixer,
                steps,
                loss,
                grad_norm,
                converged,
            });
        }
        let h = hessian(&mixer, &joints, &game.payoff, weights, config.ridge);
        let g = DVector::from_column_slice(&grad);
        loop {
            let mut damped = h.clone();
            for i in 0..p {
                damped[(i, i)] += damping;
            }
            let candidate = damped.cholesky().map(|c| c.solve(&g)).map(|delta| {
                let mut c = mixer.clone();
                c.apply_step(delta.as_slice(), 1.0);
                c
            });
            let mut next_grad = vec![0.0; p];
            let next = candidate.map(|c| {
                let l = c.loss_and_grad(&joints, &game.payoff, weights, config.ridge, &mut next_grad);
                (c, l)
            });
            match next {
                Some((c, l)) if l <= loss => {
                    mixer = c;
                    loss = l;
                    grad = next_grad;
                    damping = (damping / 3.0).max(1e-12);
                    break;
                }
                _ => {
                    damping *= 4.0;
                    if damping > 1e12 {
                        return Ok(Projection {
                            mixer,
                            steps,
                            loss,
                            grad_norm,
                            converged: false,
                        });
                    }
                }
            }
        }
        steps += 1;
    }
}

/// Central differences of the analytic gradient, symmetrized.
fn hessian(mixer: &TabularMixer, joints: &[Vec<usize>], targets: &[f64], weights: &[f64], ridge: f64) -> DMatrix<f64> {
    let p = mixer.n_params();
    let mut h = DMatrix::zeros(p, p);
    let (mut gp, mut gm) = (vec![0.0; p], vec![0.0; p]);
    let theta: Vec<f64> = mixer.params().copied().collect();
    for k in 0..p {
        let eps = 1e-5 * (1.0 + theta[k].abs());
        let mut e = vec![0.0; p];
        e[k] = -eps;
        let mut plus = mixer.clone();
        plus.apply_step(&e, 1.0);
        e[k] = eps;
        let mut minus = mixer.clone();
        minus.apply_step(&e, 1.0);
        plus.loss_and_grad(joints, targets, weights, ridge, &mut gp);
        minus.loss_and_grad(joints, targets, weights, ridge, &mut gm);
        for i in 0..p {
            h[(i, k)] = (gp[i] - gm[i]) / (2.0 * eps);
        }
    }
    (&h + h.transpose()) * 0.5
}

/// `max payoff − E_{π}[payoff]` for the product of the projection's
/// per-agent Boltzmann policies.
pub fn one_shot_regret(game: &MatrixGameConfig, projection: &Projection) -> f64 {
    let pi = projection.mixer.policies();
    let expected: f64 = joint_actions(game)
        .iter()
        .zip(&game.payoff)
        .map(|(joint, r)| r * joint.iter().enumerate().map(|(a, &ua)| pi[a][ua]).product::<f64>())
        .sum();
    game.max_payoff() - expected
}

/// The closed-form weight numerator at a projection, with the one-shot
/// target `y = Q* = r`, buffer distribution `μ` and `d^π = π` (joint
/// Boltzmann): `(π/μ)(r − Q)·exp(r − Q)·(Σ_j (1 − π^j)/f'_j − 1)` where
/// `Q ≤ r`, and 0 elsewhere.
pub fn closed_form_scores(game: &MatrixGameConfig, projection: &Projection, mu: &[f64]) -> Vec<f64> {
    let mixer = &projection.mixer;
    let pi = mixer.policies();
    joint_actions(game)
        .iter()
        .zip(&game.payoff)
        .zip(mu)
        .map(|((joint, &r), &mu)| {
            let q = mixer.q_tot(joint);
            if q > r {
                return 0.0;
            }
            let fp = mixer.mixing_gradient(joint);
            let joint_pi: f64 = joint.iter().enumerate().map(|(a, &ua)| pi[a][ua]).product();
            let bracket: f64 = joint
                .iter()
                .enumerate()
                .map(|(a, &ua)| (1.0 - pi[a][ua]) / fp[a].max(1e-12))
                .sum::<f64>()
                - 1.0;
            joint_pi / mu * (r - q) * (r - q).exp() * bracket
        })
        .collect()
}

/// Spearman rank correlation with average ranks for ties; `None` when
/// either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSearchResult {
    pub config: WeightSearchConfig,
    pub n_weights: usize,
    /// Point `i` gives weight `k` the level `1 + digit_k(i)` in base
    /// `resolution`, first joint action most significant, then normalizes
    /// to sum 1.
    pub levels: Vec<usize>,
    /// Exact one-shot regret per grid point; `None` for non-convergent
    /// projections.
    pub landscape: Vec<Option<f64>>,
    pub non_converged: usize,
    pub best_index: usize,
    pub best_weights: Vec<f64>,
    pub best_regret: f64,
    pub uniform_regret: f64,
    pub uniform_converged: bool,
    /// Closed-form scores at the uniform-weight projection.
    pub closed_form_at_uniform: Vec<f64>,
    /// Rank correlation of `best_weights` with `closed_form_at_uniform`.
    pub spearman: Option<f64>,
}

impl WeightSearchResult {
    pub fn improvement(&self) -> f64 {
        self.uniform_regret - self.best_regret
    }
}

pub fn grid_weights(index: usize, n_weights: usize, resolution: usize) -> Vec<f64> {
    let mut levels = vec![0.0; n_weights];
    let mut i = index;
    for slot in levels.iter_mut().rev() {
        *slot = (1 + i % resolution) as f64;
        i /= resolution;
    }
    let z: f64 = levels.iter().sum();
    levels.iter_mut().for_each(|w| *w /= z);
    levels
}

/// Projects the payoff under every grid weighting and returns the exact
/// regret landscape. Point 0 is the uniform weighting.
pub fn exhaustive_weight_search(game: &MatrixGameConfig, config: &WeightSearchConfig) -> Result<WeightSearchResult> {
    check_game(game)?;
    if config.resolution == 0 {
        return Err(OracleError::Invalid("resolution must be at least 1".into()));
    }
    let n = game.n_joint();
    let points = config
        .resolution
        .checked_pow(n as u32)
        .filter(|&p| p <= 10_000_000)
        .ok_or_else(|| OracleError::Invalid("weight grid too large".into()))?;
    let threads = match config.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        t => t,
    }
    .min(points);

    let evaluate = |i: usize| -> Result<Option<f64>> {
        let p = project(game, &grid_weights(i, n, config.resolution), config)?;
        Ok(p.converged.then(|| one_shot_regret(game, &p)))
    };
    let mut landscape: Vec<Option<f64>> = vec![None; points];
    let chunk = points.div_ceil(threads);
    std::thread::scope(|scope| -> Result<()> {
        let handles: Vec<_> = landscape
            .chunks_mut(chunk)
            .enumerate()
            .map(|(c, out)| {
                scope.spawn(move || -> Result<()> {
                    for (k, slot) in out.iter_mut().enumerate() {
                        *slot = evaluate(c * chunk + k)?;
                    }
                    Ok(())
                })
            })
            .collect();
        for h in handles {
            h.join()
                .map_err(|_| OracleError::Invalid("weight search worker panicked".into()))??;
        }
        Ok(())
    })?;

    let non_converged = landscape.iter().filter(|r| r.is_none()).count();
    let (best_index, best_regret) = landscape
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|r| (i, r)))
        .fold(None, |best: Option<(usize, f64)>, (i, r)| match best {
            Some((_, b)) if b <= r => best,
            _ => Some((i, r)),
        })
        .ok_or(OracleError::NoConvergence(points))?;

    let uniform = vec![1.0 / n as f64; n];
    let uniform_projection = project(game, &uniform, config)?;
    let uniform_regret = one_shot_regret(game, &uniform_projection);
    let closed_form_at_uniform = closed_form_scores(game, &uniform_projection, &uniform);
    let best_weights = grid_weights(best_index, n, config.resolution);
    Ok(WeightSearchResult {
        config: config.clone(),
        n_weights: n,
        levels: (1..=config.resolution).collect(),
        spearman: spearman(&best_weights, &closed_form_at_uniform),
        landscape,
        non_converged,
        best_index,
        best_weights,
        best_regret,
        uniform_regret,
        uniform_converged: uniform_projection.converged,
        closed_form_at_uniform,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_point_zero_is_uniform() {
        assert_eq!(grid_weights(0, 4, 3), vec![0.25; 4]);
        assert_eq!(grid_weights(1, 3, 2), vec![0.25, 0.25, 0.5]);
        assert_eq!(grid_weights(4, 3, 2), vec![0.5, 0.25, 0.25]);
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
        assert_eq!(ranks(&[5.0, 1.0, 5.0, 0.0]), vec![3.5, 2.0, 3.5, 1.0]);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let game = MatrixGameConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mixer = TabularMixer::init(2, 3, 3, &mut rng);
        let joints = joint_actions(&game);
        let w: Vec<f64> = (0..9).map(|i| 0.05 + 0.01 * i as f64).collect();
        let mut grad = vec![0.0; mixer.n_params()];
        mixer.loss_and_grad(&joints, &game.payoff, &w, 0.01, &mut grad);
        let mut scratch = grad.clone();
        let h = 1e-6;
        for k in 0..grad.len() {
            let mut e = vec![0.0; grad.len()];
            e[k] = 1.0;
            let (mut plus, mut minus) = (mixer.clone(), mixer.clone());
            plus.apply_step(&e, -h);
            minus.apply_step(&e, h);
            let fd = (plus.loss_and_grad(&joints, &game.payoff, &w, 0.01, &mut scratch)
                - minus.loss_and_grad(&joints, &game.payoff, &w, 0.01, &mut scratch))
                / (2.0 * h);
            assert!(
                (fd - grad[k]).abs() <= 1e-6 * (1.0 + fd.abs()),
                "param {k}: {fd} vs {}",
                grad[k]
            );
        }
    }
}
