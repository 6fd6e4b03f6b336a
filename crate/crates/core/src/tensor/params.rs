use std::collections::BTreeMap;

use rand::Rng;

use super::{Gradients, Result, Tensor, TensorError};

/// Adaptive-moment optimizer settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clipping threshold applied before the update.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    value: Tensor,
    m: Tensor,
    v: Tensor,
}

/// Named parameters plus their optimizer state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Entry>,
    step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub grad_norm: f64,
    pub clipped: bool,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        self.params.insert(name.to_string(), Entry { value, m, v });
    }

    /// Inserts a `[fan_in × fan_out]` weight drawn from
    /// `U(-1/√fan_in, 1/√fan_in)`.
    pub fn init_uniform<R: Rng + ?Sized>(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut R) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        self.insert(name, Tensor::uniform(shape, bound, rng));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|e| &e.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name).map(|e| &mut e.value)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|e| e.value.len()).sum()
    }

    /// Hard copy of parameter values from `other`; optimizer state is left alone.
    pub fn copy_values_from(&mut self, other: &ParamStore) {
        for (name, e) in &other.params {
            match self.params.get_mut(name) {
                Some(mine) => mine.value = e.value.clone(),
                None => self.insert(name, e.value.clone()),
            }
        }
    }

    /// One Adam update. Gradients are clipped jointly to `clip_norm`;
    /// parameters missing from `grads` are treated as having zero gradient.
    pub fn adam_step(&mut self, grads: &Gradients, cfg: &AdamConfig) -> Result<StepReport> {
        for (name, g) in grads.iter() {
            if !self.params.contains_key(name) {
                return Err(TensorError::UnknownParam(name.clone()));
            }
            if g.data().iter().any(|x| x.is_nan()) {
                return Err(TensorError::NanGradient(name.clone()));
            }
        }
        let grad_norm = grads.global_norm();
        let clipped = grad_norm > cfg.clip_norm;
        let scale = if clipped { cfg.clip_norm / grad_norm } else { 1.0 };

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (name, e) in self.params.iter_mut() {
            let g = grads.get(name);
            let n = e.value.len();
            let (value, m, v) = (e.value.data_mut(), e.m.data_mut(), e.v.data_mut());
            for i in 0..n {
                let gi = g.map_or(0.0, |g| g.data()[i] * scale);
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                value[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        Ok(StepReport { grad_norm, clipped })
    }

    /// Flattens values and optimizer state into named tensors
    /// (`name`, `name@m`, `name@v`).
    pub fn export(&self, prefix: &str, with_state: bool) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (name, e) in &self.params {
            out.push((format!("{prefix}{name}"), e.value.clone()));
            if with_state {
                out.push((format!("{prefix}{name}@m"), e.m.clone()));
                out.push((format!("{prefix}{name}@v"), e.v.clone()));
            }
        }
        out
    }

    /// Inverse of [`ParamStore::export`]. Every parameter present in `self`
    /// must be found; missing moment tensors reset to zero.
    pub fn import(&mut self, prefix: &str, tensors: &BTreeMap<String, Tensor>, step: u64) -> Result<()> {
        for (name, e) in self.params.iter_mut() {
            let key = format!("{prefix}{name}");
            let value = tensors
                .get(&key)
                .ok_or_else(|| TensorError::Checkpoint(format!("missing tensor `{key}`")))?;
            if value.shape() != e.value.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "ParamStore::import",
                    lhs: e.value.shape().to_vec(),
                    rhs: value.shape().to_vec(),
                });
            }
            e.value = value.clone();
            e.m = tensors
                .get(&format!("{key}@m"))
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(value.shape()));
            e.v = tensors
                .get(&format!("{key}@v"))
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(value.shape()));
        }
        self.step = step;
        Ok(())
    }
}
