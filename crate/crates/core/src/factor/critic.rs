use rand::Rng;

use super::{AgentNet, Dims, FactorConfig, Linear};
use crate::tensor::{Graph, NodeId, ParamStore, Result};

/// Unrestricted joint value `Q̂*(s, u)`: its own agent head produces
/// per-agent utilities, the chosen ones are concatenated with the state and
/// fed through a two-hidden-layer ReLU network with no sign constraints.
#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    pub head: AgentNet,
    n_agents: usize,
    fc1: Linear,
    fc2: Linear,
    fc3: Linear,
}

impl Critic {
    pub fn new(dims: Dims, config: &FactorConfig) -> Self {
        let h = config.critic_hidden;
        Self {
            head: AgentNet::new(
                "critic.agent",
                dims.agent_input_dim(),
                config.agent_hidden,
                dims.n_actions,
                config.recurrent,
            ),
            n_agents: dims.n_agents,
            fc1: Linear::new("critic.fc1", dims.state_dim + dims.n_agents, h),
            fc2: Linear::new("critic.fc2", h, h),
            fc3: Linear::new("critic.fc3", h, 1),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        self.head.init(store, rng);
        self.fc1.init(store, rng);
        self.fc2.init(store, rng);
        self.fc3.init(store, rng);
    }

    /// `chosen: [R × n]` head utilities of the evaluated joint action,
    /// `s: [R × state_dim]`. Returns `[R]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, chosen: NodeId, s: NodeId) -> Result<NodeId> {
        let rows = g.value(chosen).rows();
        debug_assert_eq!(g.value(chosen).cols(), self.n_agents);
        let x = g.concat_cols(&[s, chosen])?;
        let h = self.fc1.apply(g, store, x)?;
        let h = g.relu(h)?;
        let h = self.fc2.apply(g, store, h)?;
        let h = g.relu(h)?;
        let out = self.fc3.apply(g, store, h)?;
        g.reshape(out, &[rows])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Critic, ParamStore) {
        let dims = Dims {
            n_agents: 2,
            n_actions: 3,
            obs_dim: 4,
            state_dim: 5,
        };
        let critic = Critic::new(dims, &FactorConfig::default());
        let mut store = ParamStore::new();
        critic.init(&mut store, &mut ChaCha8Rng::seed_from_u64(3));
        (critic, store)
    }

    #[test]
    fn zero_parameters_output_bias() {
        let (critic, mut store) = setup();
        for name in [
            "critic.fc1.w",
            "critic.fc1.b",
            "critic.fc2.w",
            "critic.fc2.b",
            "critic.fc3.w",
        ] {
            store.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        store.get_mut("critic.fc3.b").unwrap().data_mut()[0] = 1.25;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut g = Graph::new();
        let q = g.input(Tensor::uniform(&[3, 2], 5.0, &mut rng));
        let s = g.input(Tensor::uniform(&[3, 5], 5.0, &mut rng));
        let out = critic.forward(&mut g, &store, q, s).unwrap();
        assert_eq!(g.value(out).data(), &[1.25, 1.25, 1.25]);
    }

    #[test]
    fn deterministic() {
        let (critic, store) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = Tensor::uniform(&[4, 2], 1.0, &mut rng);
        let s = Tensor::uniform(&[4, 5], 1.0, &mut rng);
        let eval = || {
            let mut g = Graph::new();
            let qi = g.input(q.clone());
            let si = g.input(s.clone());
            let out = critic.forward(&mut g, &store, qi, si).unwrap();
            g.value(out).clone()
        };
        assert_eq!(eval(), eval());
    }
}
