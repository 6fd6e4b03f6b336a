use rand::Rng;

use super::{FactorError, Linear};
use crate::tensor::{Graph, NodeId, ParamStore, Result, Tensor};

/// Two-layer monotonic mixer whose weights are emitted by hypernetworks
/// of the global state:
/// `Q_tot = elu(Qᵀ·W1 + b1)·W2 + b2`, with `W1 = |H1(s)|`, `W2 = |H2(s)|`,
/// `b1 = B1(s)` and `b2 = B2(relu(V(s)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixer {
    pub n_agents: usize,
    pub state_dim: usize,
    pub width: usize,
    hyper_w1: Linear,
    hyper_b1: Linear,
    hyper_w2: Linear,
    hyper_b2_hidden: Linear,
    hyper_b2_out: Linear,
}

/// Graph nodes produced by one mixer pass, for callers that need the
/// intermediate values.
#[derive(Clone, Copy, Debug)]
pub struct MixOutput {
    /// `[R]`
    pub q_tot: NodeId,
    /// `[R × n·m]`, non-negative.
    pub w1: NodeId,
    /// Hidden pre-activations `Qᵀ·W1 + b1`, `[R × m]`.
    pub pre: NodeId,
    /// `[R × m]`, non-negative.
    pub w2: NodeId,
}

impl Mixer {
    pub fn new(n_agents: usize, state_dim: usize, width: usize, b2_hidden: usize) -> Self {
        Self {
            n_agents,
            state_dim,
            width,
            hyper_w1: Linear::new("hyper_w1", state_dim, n_agents * width),
            hyper_b1: Linear::new("hyper_b1", state_dim, width),
            hyper_w2: Linear::new("hyper_w2", state_dim, width),
            hyper_b2_hidden: Linear::new("hyper_b2.fc1", state_dim, b2_hidden),
            hyper_b2_out: Linear::new("hyper_b2.fc2", b2_hidden, 1),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        for l in [
            &self.hyper_w1,
            &self.hyper_b1,
            &self.hyper_w2,
            &self.hyper_b2_hidden,
            &self.hyper_b2_out,
        ] {
            l.init(store, rng);
        }
    }

    /// `q: [R × n]` chosen-action utilities, `s: [R × state_dim]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, q: NodeId, s: NodeId) -> Result<MixOutput> {
        let rows = g.value(q).rows();
        let w1 = self.hyper_w1.apply(g, store, s)?;
        let w1 = g.abs(w1)?;
        let b1 = self.hyper_b1.apply(g, store, s)?;
        let qw = g.batch_vecmat(q, w1, self.width)?;
        let pre = g.add(qw, b1)?;
        let hidden = g.elu(pre, 1.0)?;
        let w2 = self.hyper_w2.apply(g, store, s)?;
        let w2 = g.abs(w2)?;
        let hw = g.mul(hidden, w2)?;
        let y = g.row_sum(hw)?;
        let v = self.hyper_b2_hidden.apply(g, store, s)?;
        let v = g.relu(v)?;
        let b2 = self.hyper_b2_out.apply(g, store, v)?;
        let b2 = g.reshape(b2, &[rows])?;
        let q_tot = g.add(y, b2)?;
        Ok(MixOutput { q_tot, w1, pre, w2 })
    }

    /// Evaluates the hypernetworks at a single state.
    pub fn params_for(&self, store: &ParamStore, state: &[f64]) -> Result<MixingParams, FactorError> {
        if state.len() != self.state_dim {
            return Err(FactorError::Length {
                expected: self.state_dim,
                got: state.len(),
            });
        }
        let mut g = Graph::with_checks(false);
        let s = g.input(Tensor::matrix(1, self.state_dim, state.to_vec())?);
        let w1 = self.hyper_w1.apply(&mut g, store, s)?;
        let w1 = g.abs(w1)?;
        let b1 = self.hyper_b1.apply(&mut g, store, s)?;
        let w2 = self.hyper_w2.apply(&mut g, store, s)?;
        let w2 = g.abs(w2)?;
        let v = self.hyper_b2_hidden.apply(&mut g, store, s)?;
        let v = g.relu(v)?;
        let b2 = self.hyper_b2_out.apply(&mut g, store, v)?;
        Ok(MixingParams {
            n_agents: self.n_agents,
            width: self.width,
            w1: g.value(w1).data().to_vec(),
            b1: g.value(b1).data().to_vec(),
            w2: g.value(w2).data().to_vec(),
            b2: g.value(b2).item(),
        })
    }
}

/// Mixer weights for one state. `w1` is `n × m` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingParams {
    pub n_agents: usize,
    pub width: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MixingParams {
    fn pre_activations(&self, q: &[f64]) -> Vec<f64> {
        let m = self.width;
        let mut pre = self.b1.clone();
        for (a, &qa) in q.iter().enumerate() {
            for (p, w) in pre.iter_mut().zip(&self.w1[a * m..(a + 1) * m]) {
                *p += qa * w;
            }
        }
        pre
    }

    pub fn mix(&self, q: &[f64]) -> f64 {
        let pre = self.pre_activations(q);
        pre.iter()
            .zip(&self.w2)
            .map(|(&x, w)| crate::tensor::elu(x, 1.0) * w)
            .sum::<f64>()
            + self.b2
    }

    /// `∂Q_tot/∂Q^a = Σ_j elu'(pre_j)·w1[a][j]·w2[j]`; non-negative.
    pub fn mixing_gradient(&self, q: &[f64]) -> Vec<f64> {
        let pre = self.pre_activations(q);
        let mut out = vec![0.0; self.n_agents];
        gradient_row(&self.w1, &pre, &self.w2, &mut out);
        out
    }
}

fn gradient_row(w1: &[f64], pre: &[f64], w2: &[f64], out: &mut [f64]) {
    let m = pre.len();
    let scale: Vec<f64> = pre
        .iter()
        .zip(w2)
        .map(|(&x, &w)| crate::tensor::elu_grad(x, 1.0) * w)
        .collect();
    for (a, o) in out.iter_mut().enumerate() {
        *o = w1[a * m..(a + 1) * m].iter().zip(&scale).map(|(w, s)| w * s).sum();
    }
}

/// Mixer gradients for every row of a batched mixer pass, from the values
/// of [`MixOutput::w1`], [`MixOutput::pre`] and [`MixOutput::w2`].
/// Returns `[R × n]` row-major.
pub fn mixing_gradient_rows(w1: &Tensor, pre: &Tensor, w2: &Tensor, n_agents: usize) -> Vec<f64> {
    let rows = pre.rows();
    let m = pre.cols();
    let mut out = vec![0.0; rows * n_agents];
    for r in 0..rows {
        gradient_row(
            &w1.data()[r * n_agents * m..(r + 1) * n_agents * m],
            pre.row(r),
            w2.row(r),
            &mut out[r * n_agents..(r + 1) * n_agents],
        );
    }
    out
}
