use rand::Rng;

use crate::tensor::{Graph, NodeId, ParamStore, Result};

/// Affine layer `x·W + b` with `W: [fan_in × fan_out]`, stored as
/// `<name>.w` and `<name>.b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, fan_in: usize, fan_out: usize) -> Self {
        Self {
            name: name.into(),
            fan_in,
            fan_out,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        store.init_uniform(&self.weight_name(), &[self.fan_in, self.fan_out], self.fan_in, rng);
        store.init_uniform(&self.bias_name(), &[self.fan_out], self.fan_in, rng);
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, &self.weight_name())?;
        let b = g.param(store, &self.bias_name())?;
        let xw = g.matmul(x, w)?;
        g.add_bias(xw, b)
    }
}
