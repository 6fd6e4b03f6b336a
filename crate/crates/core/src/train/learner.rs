use std::collections::BTreeMap;

use rand::Rng;

use super::{lambda_returns, Episode, Result, TrainConfig, TrainError};
use crate::factor::{boltzmann_policies, component_of, greedy_joint_action, mixing_gradient_rows, Dims, Networks};
use crate::tensor::{AdamConfig, Checkpoint, Graph, NodeId, ParamStore, Tensor};
use crate::weighting::{BatchEval, WeightScheme, WeightVector};

/// Live and target parameters plus the weighting scheme.
pub struct Learner {
    pub nets: Networks,
    pub config: TrainConfig,
    /// Agent network and hypernetworks.
    pub qmix: ParamStore,
    pub critic: ParamStore,
    pub target_qmix: ParamStore,
    pub target_critic: ParamStore,
    scheme: Box<dyn WeightScheme>,
}

#[derive(Clone, Debug, Default)]
pub struct StepStats {
    pub loss_qtot: f64,
    pub loss_qstar: f64,
    pub grad_norm_qtot: f64,
    pub grad_norm_qstar: f64,
    pub transitions: usize,
    pub weights: WeightVector,
}

/// Rows fed to an agent network for a batch of episodes.
///
/// Feed-forward networks get one block holding exactly the requested
/// `(episode, t)` entries. Recurrent networks get time-major blocks of
/// every episode at every `t < steps`, padded with zero rows.
struct Layout {
    steps: usize,
    /// `(episode, t)` per entry; `None` marks padding.
    entries: Vec<Option<(usize, usize)>>,
}

impl Layout {
    fn new(episodes: &[&Episode], recurrent: bool, steps: usize, wanted: impl Fn(&Episode, usize) -> bool) -> Self {
        if recurrent {
            let mut entries = Vec::with_capacity(steps * episodes.len());
            for t in 0..steps {
                for (b, ep) in episodes.iter().enumerate() {
                    entries.push((t <= ep.len).then_some((b, t)));
                }
            }
            Self { steps, entries }
        } else {
            let mut entries = Vec::new();
            for (b, ep) in episodes.iter().enumerate() {
                for t in 0..=ep.len {
                    if wanted(ep, t) {
                        entries.push(Some((b, t)));
                    }
                }
            }
            Self { steps: 1, entries }
        }
    }

    fn index(&self, n_episodes: usize, b: usize, t: usize) -> usize {
        if self.steps == 1 {
            self.entries
                .binary_search_by(|e| e.expect("feed-forward layouts have no padding").cmp(&(b, t)))
                .expect("entry present in layout")
        } else {
            t * n_episodes + b
        }
    }

    fn inputs(&self, dims: &Dims, episodes: &[&Episode]) -> Result<Tensor> {
        let n = dims.n_agents;
        let width = dims.agent_input_dim();
        let mut data = Vec::with_capacity(self.entries.len() * n * width);
        for e in &self.entries {
            match *e {
                Some((b, t)) => {
                    let ep = episodes[b];
                    for a in 0..n {
                        dims.push_agent_input(ep.obs_at(t, a), ep.last_action(t, a), a, &mut data);
                    }
                }
                None => data.resize(data.len() + n * width, 0.0),
            }
        }
        Ok(Tensor::matrix(self.entries.len() * n, width, data)?)
    }
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(
        nets: Networks,
        config: TrainConfig,
        scheme: Box<dyn WeightScheme>,
        rng: &mut R,
    ) -> Self {
        let qmix = nets.init_factored(rng);
        let critic = nets.init_critic(rng);
        Self {
            target_qmix: qmix.clone(),
            target_critic: critic.clone(),
            nets,
            config,
            qmix,
            critic,
            scheme,
        }
    }

    pub fn scheme(&self) -> &dyn WeightScheme {
        self.scheme.as_ref()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.config.lr,
            clip_norm: self.config.grad_clip,
            ..AdamConfig::default()
        }
    }

    /// Hard copy of live parameters into the target networks.
    pub fn sync_targets(&mut self) {
        self.target_qmix.copy_values_from(&self.qmix);
        self.target_critic.copy_values_from(&self.critic);
    }

    /// Live utilities (`n_agents × n_actions`, row-major) for one decision.
    pub fn act(
        &self,
        observations: &[Tensor],
        last_actions: &[Option<usize>],
        hidden: Option<&Tensor>,
    ) -> Result<(Vec<f64>, Option<Tensor>)> {
        let dims = &self.nets.dims;
        let mut data = Vec::with_capacity(dims.n_agents * dims.agent_input_dim());
        for (a, (o, last)) in observations.iter().zip(last_actions).enumerate() {
            dims.push_agent_input(o.data(), *last, a, &mut data);
        }
        let x = Tensor::matrix(dims.n_agents, dims.agent_input_dim(), data)?;
        let (q, h) = self.nets.agent.act(&self.qmix, x, hidden)?;
        Ok((q.into_data(), h))
    }

    /// TD(λ) targets for every transition, in episode-then-time order.
    /// Bootstrap values come from the target critic at the joint action the
    /// target agents pick greedily in the next state.
    pub fn targets(&self, episodes: &[&Episode]) -> Result<Vec<f64>> {
        let dims = self.nets.dims;
        let n = dims.n_agents;
        let k = dims.n_actions;
        let max_len = episodes.iter().map(|e| e.len).max().unwrap_or(0);
        let layout = Layout::new(episodes, self.nets.config.recurrent, max_len + 1, |_, t| t >= 1);
        let x = layout.inputs(&dims, episodes)?;

        let mut g = Graph::new();
        let xi = g.input(x);
        let q_target = self.nets.agent.forward(&mut g, &self.target_qmix, xi, layout.steps)?;
        let head = self
            .nets
            .critic
            .head
            .forward(&mut g, &self.target_critic, xi, layout.steps)?;

        // Rows of the next-state entries, in episode-then-time order.
        let mut rows = Vec::new();
        let mut greedy = Vec::new();
        let mut states = Vec::new();
        let qv = g.value(q_target).clone();
        for (b, ep) in episodes.iter().enumerate() {
            for t in 1..=ep.len {
                let e = layout.index(episodes.len(), b, t);
                let utilities = &qv.data()[e * n * k..(e + 1) * n * k];
                greedy.extend(greedy_joint_action(utilities, &ep.avail_at(t))?);
                rows.extend((0..n).map(|a| e * n + a));
                states.extend_from_slice(ep.state_at(t));
            }
        }
        let m = rows.len() / n.max(1);
        let head = g.select_rows(head, &rows)?;
        let chosen = g.gather_cols(head, &greedy)?;
        let chosen = g.reshape(chosen, &[m, n])?;
        let s = g.input(Tensor::matrix(m, dims.state_dim, states)?);
        let v = self.nets.critic.forward(&mut g, &self.target_critic, chosen, s)?;
        let v = g.value(v).data();

        let mut y = Vec::with_capacity(m);
        let mut off = 0;
        for ep in episodes {
            let boot = &v[off..off + ep.len];
            y.extend(lambda_returns(
                &ep.rewards,
                boot,
                ep.terminal,
                self.config.gamma,
                self.config.td_lambda,
            ));
            off += ep.len;
        }
        Ok(y)
    }

    /// Chosen-action utilities of `net` at every transition, `[V × n]`,
    /// plus the full utility rows `[V·n × |U|]`.
    fn chosen_utilities(
        &self,
        g: &mut Graph,
        forward: impl FnOnce(&mut Graph, NodeId, usize) -> crate::tensor::Result<NodeId>,
        episodes: &[&Episode],
    ) -> Result<(NodeId, NodeId)> {
        let dims = self.nets.dims;
        let n = dims.n_agents;
        let max_len = episodes.iter().map(|e| e.len).max().unwrap_or(0);
        let layout = Layout::new(episodes, self.nets.config.recurrent, max_len, |ep, t| t < ep.len);
        let x = layout.inputs(&dims, episodes)?;
        let xi = g.input(x);
        let u = forward(g, xi, layout.steps)?;
        let mut rows = Vec::new();
        let mut actions = Vec::new();
        for (b, ep) in episodes.iter().enumerate() {
            for t in 0..ep.len {
                let e = layout.index(episodes.len(), b, t);
                rows.extend((0..n).map(|a| e * n + a));
                actions.extend_from_slice(ep.actions_at(t));
            }
        }
        let u = if self.nets.config.recurrent {
            g.select_rows(u, &rows)?
        } else {
            u
        };
        let chosen = g.gather_cols(u, &actions)?;
        let chosen = g.reshape(chosen, &[rows.len() / n.max(1), n])?;
        Ok((chosen, u))
    }

    fn states(&self, episodes: &[&Episode]) -> Result<Tensor> {
        let sd = self.nets.dims.state_dim;
        let mut data = Vec::new();
        for ep in episodes {
            for t in 0..ep.len {
                data.extend_from_slice(ep.state_at(t));
            }
        }
        Ok(Tensor::matrix(data.len() / sd.max(1), sd, data)?)
    }

    /// One update of the critic (unweighted) and of the factored value
    /// (weighted by the scheme) toward shared TD(λ) targets.
    pub fn train_step(&mut self, episodes: &[&Episode]) -> Result<StepStats> {
        let dims = self.nets.dims;
        let n = dims.n_agents;
        let k = dims.n_actions;
        let y = self.targets(episodes)?;
        let v = y.len();
        if v == 0 {
            return Ok(StepStats::default());
        }
        let states = self.states(episodes)?;
        let adam = self.adam();

        // Unrestricted critic.
        let mut g = Graph::new();
        let nets = &self.nets;
        let critic_store = &self.critic;
        let (chosen, _) = self.chosen_utilities(
            &mut g,
            |g, x, steps| nets.critic.head.forward(g, critic_store, x, steps),
            episodes,
        )?;
        let s = g.input(states.clone());
        let q_star = self.nets.critic.forward(&mut g, &self.critic, chosen, s)?;
        let q_star_values = g.value(q_star).data().to_vec();
        let loss = g.weighted_mse(q_star, &y, &vec![1.0; v])?;
        let loss_qstar = g.value(loss).item();
        let grads = g.backward(loss)?;
        drop(g);
        let report_c = self.critic.adam_step(&grads, &adam)?;

        // Factored value.
        let mut g = Graph::new();
        let qmix_store = &self.qmix;
        let (chosen, utilities) = self.chosen_utilities(
            &mut g,
            |g, x, steps| nets.agent.forward(g, qmix_store, x, steps),
            episodes,
        )?;
        let s = g.input(states);
        let mix = self.nets.mixer.forward(&mut g, &self.qmix, chosen, s)?;

        let mut batch = BatchEval {
            n_agents: n,
            q_tot: g.value(mix.q_tot).data().to_vec(),
            target: y.clone(),
            q_star: q_star_values,
            pi: Vec::with_capacity(v * n),
            f_grad: mixing_gradient_rows(g.value(mix.w1), g.value(mix.pre), g.value(mix.w2), n),
            greedy_match: Vec::with_capacity(v),
        };
        let uv = g.value(utilities).data();
        let mut i = 0;
        for ep in episodes {
            for t in 0..ep.len {
                let row = &uv[i * n * k..(i + 1) * n * k];
                let masks = ep.avail_at(t);
                let taken = ep.actions_at(t);
                let pi = boltzmann_policies(row, &masks)?;
                batch.pi.extend(taken.iter().enumerate().map(|(a, &u)| pi[a][u]));
                batch.greedy_match.push(greedy_joint_action(row, &masks)? == taken);
                i += 1;
            }
        }
        let weights = self.scheme.weights(&batch);
        let loss = g.weighted_mse(mix.q_tot, &y, &weights.normalized)?;
        let loss_qtot = g.value(loss).item();
        let grads = g.backward(loss)?;
        drop(g);
        let report_q = self.qmix.adam_step(&grads, &adam)?;

        Ok(StepStats {
            loss_qtot,
            loss_qstar,
            grad_norm_qtot: report_q.grad_norm,
            grad_norm_qstar: report_c.grad_norm,
            transitions: v,
            weights,
        })
    }

    /// Parameters and optimizer state grouped by component: `agent`,
    /// `hyper_w1`, `hyper_w2`, `hyper_b1`, `hyper_b2`, `critic`, `targets`.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for (name, t) in self.qmix.export("", true) {
            let comp = component_of(&name).to_string();
            ck.push(&comp, name, t);
        }
        ck.extend("critic", self.critic.export("", true));
        ck.extend("targets", self.target_qmix.export("target.", false));
        ck.extend("targets", self.target_critic.export("target.", false));
        ck.meta = serde_json::json!({
            "adam_step_qmix": self.qmix.step_count(),
            "adam_step_critic": self.critic.step_count(),
        });
        ck
    }

    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        let map: BTreeMap<String, Tensor> = ck.tensor_map();
        let step = |key: &str| {
            ck.meta
                .get(key)
                .and_then(serde_json::Value::as_u64)
                .ok_or_else(|| TrainError::Resume(format!("checkpoint meta lacks `{key}`")))
        };
        self.qmix.import("", &map, step("adam_step_qmix")?)?;
        self.critic.import("", &map, step("adam_step_critic")?)?;
        self.target_qmix.import("target.", &map, 0)?;
        self.target_critic.import("target.", &map, 0)?;
        Ok(())
    }
}
