use rand::Rng;

use super::Linear;
use crate::tensor::{Graph, NodeId, ParamStore, Result, Tensor};

/// Shared-parameter utility network: `input → 64 ReLU [→ GRU 64] → |U|`.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentNet {
    pub prefix: String,
    pub input_dim: usize,
    pub hidden: usize,
    pub n_actions: usize,
    pub recurrent: bool,
    fc1: Linear,
    fc2: Linear,
    gru: Option<Gru>,
}

impl AgentNet {
    pub fn new(prefix: &str, input_dim: usize, hidden: usize, n_actions: usize, recurrent: bool) -> Self {
        Self {
            prefix: prefix.to_string(),
            input_dim,
            hidden,
            n_actions,
            recurrent,
            fc1: Linear::new(format!("{prefix}.fc1"), input_dim, hidden),
            fc2: Linear::new(format!("{prefix}.fc2"), hidden, n_actions),
            gru: recurrent.then(|| Gru::new(&format!("{prefix}.gru"), hidden)),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        self.fc1.init(store, rng);
        if let Some(gru) = &self.gru {
            gru.init(store, rng);
        }
        self.fc2.init(store, rng);
    }

    /// Utilities for a sequence laid out as `steps` consecutive blocks of
    /// `rows / steps` rows each (time-major). Returns `[rows × n_actions]`.
    /// With the recurrent cell the hidden state starts at zero and carries
    /// from block `t` to block `t+1` row by row.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId, steps: usize) -> Result<NodeId> {
        let h = self.fc1.apply(g, store, x)?;
        let h = g.relu(h)?;
        let h = match &self.gru {
            None => h,
            Some(gru) => {
                let rows = g.value(h).rows();
                let per = rows / steps.max(1);
                let mut state = g.input(Tensor::zeros(&[per, self.hidden]));
                let mut outs = Vec::with_capacity(steps);
                for t in 0..steps {
                    let idx: Vec<usize> = (t * per..(t + 1) * per).collect();
                    let xt = g.select_rows(h, &idx)?;
                    state = gru.step(g, store, xt, state)?;
                    outs.push(state);
                }
                g.concat_rows(&outs)?
            }
        };
        self.fc2.apply(g, store, h)
    }

    /// One decision step for `x: [k × input_dim]`, threading the recurrent
    /// state when present. Returns `(utilities [k × n_actions], next hidden)`.
    pub fn act(&self, store: &ParamStore, x: Tensor, hidden: Option<&Tensor>) -> Result<(Tensor, Option<Tensor>)> {
        let mut g = Graph::with_checks(false);
        let k = x.rows();
        let x = g.input(x);
        let h = self.fc1.apply(&mut g, store, x)?;
        let h = g.relu(h)?;
        let (h, next) = match &self.gru {
            None => (h, None),
            Some(gru) => {
                let prev = hidden.cloned().unwrap_or_else(|| Tensor::zeros(&[k, self.hidden]));
                let prev = g.input(prev);
                let h = gru.step(&mut g, store, h, prev)?;
                (h, Some(g.value(h).clone()))
            }
        };
        let q = self.fc2.apply(&mut g, store, h)?;
        Ok((g.value(q).clone(), next))
    }
}

/// Gated recurrent cell with separate per-gate weights.
#[derive(Clone, Debug, PartialEq)]
struct Gru {
    xr: Linear,
    hr: Linear,
    xz: Linear,
    hz: Linear,
    xn: Linear,
    hn: Linear,
}

impl Gru {
    fn new(prefix: &str, hidden: usize) -> Self {
        let l = |n: &str| Linear::new(format!("{prefix}.{n}"), hidden, hidden);
        Self {
            xr: l("xr"),
            hr: l("hr"),
            xz: l("xz"),
            hz: l("hz"),
            xn: l("xn"),
            hn: l("hn"),
        }
    }

    fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        for l in [&self.xr, &self.hr, &self.xz, &self.hz, &self.xn, &self.hn] {
            l.init(store, rng);
        }
    }

    /// `r = σ(x·Wr + h·Ur)`, `z = σ(x·Wz + h·Uz)`,
    /// `n = tanh(x·Wn + r ⊙ (h·Un))`, `h' = (1 − z) ⊙ n + z ⊙ h`.
    fn step(&self, g: &mut Graph, store: &ParamStore, x: NodeId, h: NodeId) -> Result<NodeId> {
        let gate = |g: &mut Graph, a: &Linear, b: &Linear| -> Result<NodeId> {
            let u = a.apply(g, store, x)?;
            let v = b.apply(g, store, h)?;
            let s = g.add(u, v)?;
            g.sigmoid(s)
        };
        let r = gate(g, &self.xr, &self.hr)?;
        let z = gate(g, &self.xz, &self.hz)?;
        let xn = self.xn.apply(g, store, x)?;
        let hn = self.hn.apply(g, store, h)?;
        let rhn = g.mul(r, hn)?;
        let pre = g.add(xn, rhn)?;
        let n = g.tanh(pre)?;
        let one_minus_z = g.affine(z, -1.0, 1.0)?;
        let a = g.mul(one_minus_z, n)?;
        let b = g.mul(z, h)?;
        g.add(a, b)
    }
}
