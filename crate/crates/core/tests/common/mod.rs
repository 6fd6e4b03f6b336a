//! Checks shared by the focused test targets and the acceptance gate.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use remix_core::factor::{AgentNet, Critic, Dims, FactorConfig, Mixer};
use remix_core::tensor::{Graph, NodeId, ParamStore, Tensor};
use remix_core::weighting::{remix_raw_weights, BatchEval, RemixWeight, SchemeConfig};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, 1)`.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

/// Entries at least `margin` away from zero, for ops with a kink there.
pub fn away_from_zero<R: Rng>(shape: &[usize], margin: f64, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let x: f64 = rng.gen_range(margin..2.0);
            if rng.gen_bool(0.5) {
                x
            } else {
                -x
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Result of one finite-difference comparison.
#[derive(Clone, Copy, Debug)]
pub enum Fd {
    Checked(f64),
    /// Central differences at `h` and `h/2` disagree: a kink lies within
    /// reach of some coordinate, so the instance says nothing about the
    /// derivative.
    Kink,
}

fn central(f: &mut dyn FnMut(f64) -> f64, h: f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

/// Compares `analytic` against central differences of `f(delta)`, the loss
/// with one coordinate shifted by `delta`.
fn fd_coordinate(analytic: f64, f: &mut dyn FnMut(f64) -> f64) -> Result<f64, ()> {
    let n1 = central(f, FD_STEP);
    let n2 = central(f, FD_STEP / 2.0);
    if rel_err(n1, n2) > 1e-4 {
        return Err(());
    }
    Ok(rel_err(analytic, n1))
}

/// Scalar projection `Σ out ⊙ r` of a node with a fixed random `r`.
fn project(g: &mut Graph, out: NodeId, r: &Tensor) -> NodeId {
    let rn = g.input(r.clone());
    let p = g.mul(out, rn).unwrap();
    g.sum(p).unwrap()
}

/// Gradient check with respect to graph inputs. `build` maps input nodes to
/// an output node of any shape.
pub fn check_inputs<R: Rng>(inputs: &[Tensor], build: &dyn Fn(&mut Graph, &[NodeId]) -> NodeId, rng: &mut R) -> Fd {
    let eval = |inputs: &[Tensor], r: Option<&Tensor>| -> (Graph, Vec<NodeId>, NodeId) {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &ids);
        let loss = match r {
            Some(r) => project(&mut g, out, r),
            None => out,
        };
        (g, ids, loss)
    };
    let (g0, _, out0) = eval(inputs, None);
    let r = random_tensor(g0.value(out0).shape(), rng);
    let (g, ids, loss) = eval(inputs, Some(&r));
    let grads = g.grad_wrt(loss, &ids).unwrap();
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        for i in 0..t.len() {
            let mut f = |d: f64| {
                let mut shifted = inputs.to_vec();
                shifted[k].data_mut()[i] += d;
                let (g, _, l) = eval(&shifted, Some(&r));
                g.value(l).item()
            };
            match fd_coordinate(grads[k].data()[i], &mut f) {
                Ok(e) => worst = worst.max(e),
                Err(()) => return Fd::Kink,
            }
        }
    }
    Fd::Checked(worst)
}

/// Gradient check with respect to every parameter in `store`. `build`
/// returns a scalar loss.
pub fn check_params(store: &ParamStore, build: &dyn Fn(&mut Graph, &ParamStore) -> NodeId) -> Fd {
    let mut g = Graph::new();
    let loss = build(&mut g, store);
    let grads = g.backward(loss).unwrap();
    let names: Vec<String> = store.names().map(String::from).collect();
    let mut worst: f64 = 0.0;
    for name in &names {
        let analytic = grads.get(name).expect("every parameter is recorded").clone();
        for i in 0..analytic.len() {
            let mut f = |d: f64| {
                let mut s = store.clone();
                s.get_mut(name).unwrap().data_mut()[i] += d;
                let mut g = Graph::new();
                let l = build(&mut g, &s);
                g.value(l).item()
            };
            match fd_coordinate(analytic.data()[i], &mut f) {
                Ok(e) => worst = worst.max(e),
                Err(()) => return Fd::Kink,
            }
        }
    }
    Fd::Checked(worst)
}

/// Outcome of `instances` independent draws for one op or composition.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: &'static str,
    pub checked: usize,
    pub kinks: usize,
    pub max_err: f64,
}

impl GradReport {
    /// Every draw is checked or redrawn; at most a tenth may hit a kink.
    pub fn passed(&self) -> bool {
        self.max_err < FD_TOL && self.kinks * 10 <= self.checked
    }
}

/// Draws instances until `instances` of them are free of kinks.
fn collect(name: &'static str, instances: usize, mut draw: impl FnMut() -> Fd) -> GradReport {
    let mut r = GradReport {
        name,
        checked: 0,
        kinks: 0,
        max_err: 0.0,
    };
    while r.checked < instances {
        match draw() {
            Fd::Checked(e) => {
                r.checked += 1;
                r.max_err = r.max_err.max(e);
            }
            Fd::Kink => r.kinks += 1,
        }
        assert!(r.kinks <= instances, "{name}: kinks on nearly every draw");
    }
    r
}

type OpBuild = Box<dyn Fn(&mut Graph, &[NodeId]) -> NodeId>;

/// One random instance (inputs and graph builder) of the named op.
fn op_instance(name: &str, rng: &mut ChaCha8Rng) -> (Vec<Tensor>, OpBuild) {
    let r = rng.gen_range(1..5);
    let c = rng.gen_range(1..6);
    let k = rng.gen_range(1..5);
    let rt = |shape: &[usize], rng: &mut ChaCha8Rng| random_tensor(shape, rng);
    match name {
        "matmul" => (
            vec![rt(&[r, k], rng), rt(&[k, c], rng)],
            Box::new(|g, x| g.matmul(x[0], x[1]).unwrap()),
        ),
        "add" => (
            vec![rt(&[r, c], rng), rt(&[r, c], rng)],
            Box::new(|g, x| g.add(x[0], x[1]).unwrap()),
        ),
        "sub" => (
            vec![rt(&[r, c], rng), rt(&[r, c], rng)],
            Box::new(|g, x| g.sub(x[0], x[1]).unwrap()),
        ),
        "mul" => (
            vec![rt(&[r, c], rng), rt(&[r, c], rng)],
            Box::new(|g, x| g.mul(x[0], x[1]).unwrap()),
        ),
        "add_bias" => (
            vec![rt(&[r, c], rng), rt(&[c], rng)],
            Box::new(|g, x| g.add_bias(x[0], x[1]).unwrap()),
        ),
        "affine" => {
            let (s, t) = (rng.gen_range(-3.0..3.0), rng.gen_range(-1.0..1.0));
            (
                vec![rt(&[r, c], rng)],
                Box::new(move |g, x| g.affine(x[0], s, t).unwrap()),
            )
        }
        "elu" => {
            let alpha = rng.gen_range(0.5..1.5);
            (
                vec![rt(&[r, c], rng)],
                Box::new(move |g, x| g.elu(x[0], alpha).unwrap()),
            )
        }
        "relu" => (
            vec![away_from_zero(&[r, c], 1e-3, rng)],
            Box::new(|g, x| g.relu(x[0]).unwrap()),
        ),
        "abs" => (
            vec![away_from_zero(&[r, c], 1e-3, rng)],
            Box::new(|g, x| g.abs(x[0]).unwrap()),
        ),
        "sigmoid" => (vec![rt(&[r, c], rng)], Box::new(|g, x| g.sigmoid(x[0]).unwrap())),
        "tanh" => (vec![rt(&[r, c], rng)], Box::new(|g, x| g.tanh(x[0]).unwrap())),
        "softmax_rows" => (vec![rt(&[r, c], rng)], Box::new(|g, x| g.softmax_rows(x[0]).unwrap())),
        "row_sum" => (vec![rt(&[r, c], rng)], Box::new(|g, x| g.row_sum(x[0]).unwrap())),
        "batch_vecmat" => {
            let m = c;
            (
                vec![rt(&[r, k], rng), rt(&[r, k * m], rng)],
                Box::new(move |g, x| g.batch_vecmat(x[0], x[1], m).unwrap()),
            )
        }
        "gather_cols" => {
            let idx: Vec<usize> = (0..r).map(|_| rng.gen_range(0..c)).collect();
            (
                vec![rt(&[r, c], rng)],
                Box::new(move |g, x| g.gather_cols(x[0], &idx).unwrap()),
            )
        }
        "select_rows" => {
            let idx: Vec<usize> = (0..k + 1).map(|_| rng.gen_range(0..r)).collect();
            (
                vec![rt(&[r, c], rng)],
                Box::new(move |g, x| g.select_rows(x[0], &idx).unwrap()),
            )
        }
        "concat_cols" => {
            let c2 = rng.gen_range(1..4);
            (
                vec![rt(&[r, c], rng), rt(&[r, c2], rng)],
                Box::new(|g, x| g.concat_cols(x).unwrap()),
            )
        }
        "concat_rows" => {
            let r2 = rng.gen_range(1..4);
            (
                vec![rt(&[r, c], rng), rt(&[r2, c], rng)],
                Box::new(|g, x| g.concat_rows(x).unwrap()),
            )
        }
        "reshape" => (
            vec![rt(&[r, c], rng)],
            Box::new(move |g, x| g.reshape(x[0], &[c, r]).unwrap()),
        ),
        "weighted_mse" => {
            let target: Vec<f64> = (0..r * c).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let weights: Vec<f64> = (0..r * c).map(|_| rng.gen_range(0.0..1.0)).collect();
            (
                vec![rt(&[r * c], rng)],
                Box::new(move |g, x| g.weighted_mse(x[0], &target, &weights).unwrap()),
            )
        }
        "sum" => (vec![rt(&[r, c], rng)], Box::new(|g, x| g.sum(x[0]).unwrap())),
        "mean" => (vec![rt(&[r, c], rng)], Box::new(|g, x| g.mean(x[0]).unwrap())),
        other => panic!("no instance generator for {other}"),
    }
}

pub const OPS: [&str; 23] = [
    "matmul",
    "add",
    "sub",
    "mul",
    "add_bias",
    "affine",
    "elu",
    "relu",
    "abs",
    "sigmoid",
    "tanh",
    "softmax_rows",
    "row_sum",
    "batch_vecmat",
    "gather_cols",
    "select_rows",
    "concat_cols",
    "concat_rows",
    "reshape",
    "weighted_mse",
    "sum",
    "mean",
    "scale",
];

pub fn op_gradchecks(instances: usize, seed: u64) -> Vec<GradReport> {
    OPS.iter()
        .enumerate()
        .map(|(i, &name)| {
            let mut rng = rng(seed.wrapping_add(i as u64));
            collect(name, instances, || {
                let (inputs, build) = if name == "scale" {
                    let s = rng.gen_range(-3.0..3.0);
                    let t = random_tensor(&[rng.gen_range(1..4), rng.gen_range(1..4)], &mut rng);
                    (
                        vec![t],
                        Box::new(move |g: &mut Graph, x: &[NodeId]| g.scale(x[0], s).unwrap()) as OpBuild,
                    )
                } else {
                    op_instance(name, &mut rng)
                };
                check_inputs(&inputs, build.as_ref(), &mut rng)
            })
        })
        .collect()
}

fn small_dims() -> Dims {
    Dims {
        n_agents: 3,
        n_actions: 4,
        obs_dim: 3,
        state_dim: 4,
    }
}

fn small_factor() -> FactorConfig {
    FactorConfig {
        agent_hidden: 5,
        recurrent: false,
        mixer_width: 4,
        hyper_b2_hidden: 3,
        critic_hidden: 5,
    }
}

/// Gradient checks of the network compositions against every parameter:
/// agent network (feed-forward and recurrent), mixer, critic, and the full
/// weighted projection loss through agent, mixer and chosen-action gather.
pub fn composition_gradchecks(instances: usize, seed: u64) -> Vec<GradReport> {
    let dims = small_dims();
    let cfg = small_factor();
    let mut out = Vec::new();
    let batch = 2;
    let n = dims.n_agents;
    let in_dim = dims.agent_input_dim();

    for recurrent in [false, true] {
        let mut rng = rng(seed ^ (recurrent as u64 + 1));
        let name = if recurrent { "agent_recurrent" } else { "agent" };
        out.push(collect(name, instances, || {
            let net = AgentNet::new("agent", in_dim, cfg.agent_hidden, dims.n_actions, recurrent);
            let mut store = ParamStore::new();
            net.init(&mut store, &mut rng);
            let steps = 3;
            let x = random_tensor(&[steps * batch, in_dim], &mut rng);
            let r = random_tensor(&[steps * batch, dims.n_actions], &mut rng);
            check_params(&store, &|g, s| {
                let xi = g.input(x.clone());
                let q = net.forward(g, s, xi, steps).unwrap();
                project(g, q, &r)
            })
        }));
    }

    let mut rng_m = rng(seed ^ 0x11);
    out.push(collect("mixer", instances, || {
        let mixer = Mixer::new(n, dims.state_dim, cfg.mixer_width, cfg.hyper_b2_hidden);
        let mut store = ParamStore::new();
        mixer.init(&mut store, &mut rng_m);
        let q = random_tensor(&[batch, n], &mut rng_m);
        let s = random_tensor(&[batch, dims.state_dim], &mut rng_m);
        let r = random_tensor(&[batch], &mut rng_m);
        check_params(&store, &|g, st| {
            let (qi, si) = (g.input(q.clone()), g.input(s.clone()));
            let m = mixer.forward(g, st, qi, si).unwrap();
            project(g, m.q_tot, &r)
        })
    }));

    let mut rng_c = rng(seed ^ 0x22);
    out.push(collect("critic", instances, || {
        let critic = Critic::new(dims, &cfg);
        let mut store = ParamStore::new();
        critic.init(&mut store, &mut rng_c);
        let x = random_tensor(&[batch * n, in_dim], &mut rng_c);
        let actions: Vec<usize> = (0..batch * n).map(|_| rng_c.gen_range(0..dims.n_actions)).collect();
        let s = random_tensor(&[batch, dims.state_dim], &mut rng_c);
        let target: Vec<f64> = (0..batch).map(|_| rng_c.gen_range(-2.0..2.0)).collect();
        check_params(&store, &|g, st| {
            let xi = g.input(x.clone());
            let q = critic.head.forward(g, st, xi, 1).unwrap();
            let chosen = g.gather_cols(q, &actions).unwrap();
            let chosen = g.reshape(chosen, &[batch, n]).unwrap();
            let si = g.input(s.clone());
            let v = critic.forward(g, st, chosen, si).unwrap();
            g.weighted_mse(v, &target, &vec![1.0; batch]).unwrap()
        })
    }));

    let mut rng_l = rng(seed ^ 0x33);
    out.push(collect("weighted_projection_loss", instances, || {
        let net = AgentNet::new("agent", in_dim, cfg.agent_hidden, dims.n_actions, false);
        let mixer = Mixer::new(n, dims.state_dim, cfg.mixer_width, cfg.hyper_b2_hidden);
        let mut store = ParamStore::new();
        net.init(&mut store, &mut rng_l);
        mixer.init(&mut store, &mut rng_l);
        let x = random_tensor(&[batch * n, in_dim], &mut rng_l);
        let actions: Vec<usize> = (0..batch * n).map(|_| rng_l.gen_range(0..dims.n_actions)).collect();
        let s = random_tensor(&[batch, dims.state_dim], &mut rng_l);
        let target: Vec<f64> = (0..batch).map(|_| rng_l.gen_range(-2.0..2.0)).collect();
        let weights: Vec<f64> = (0..batch).map(|_| rng_l.gen_range(0.1..1.0)).collect();
        check_params(&store, &|g, st| {
            let xi = g.input(x.clone());
            let q = net.forward(g, st, xi, 1).unwrap();
            let chosen = g.gather_cols(q, &actions).unwrap();
            let chosen = g.reshape(chosen, &[batch, n]).unwrap();
            let si = g.input(s.clone());
            let m = mixer.forward(g, st, chosen, si).unwrap();
            g.weighted_mse(m.q_tot, &target, &weights).unwrap()
        })
    }));
    out
}

/// Closed-form mixer gradient against autodiff of the mixer output with
/// respect to the utilities.
#[derive(Clone, Debug)]
pub struct MixingGradientReport {
    pub draws: usize,
    pub mixed_sign_draws: usize,
    pub max_rel_err: f64,
}

pub fn mixing_gradient_check(draws: usize, seed: u64) -> MixingGradientReport {
    let mut rng = rng(seed);
    let mut report = MixingGradientReport {
        draws,
        mixed_sign_draws: 0,
        max_rel_err: 0.0,
    };
    for _ in 0..draws {
        let n = rng.gen_range(1..6);
        let state_dim = rng.gen_range(1..7);
        let width = rng.gen_range(1..9);
        let mixer = Mixer::new(n, state_dim, width, rng.gen_range(1..5));
        let mut store = ParamStore::new();
        mixer.init(&mut store, &mut rng);
        let names: Vec<String> = store.names().map(String::from).collect();
        let gain = rng.gen_range(0.5..4.0);
        for name in &names {
            for x in store.get_mut(name).unwrap().data_mut() {
                *x *= gain;
            }
        }
        let state: Vec<f64> = (0..state_dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let scale = rng.gen_range(0.1..10.0);
        let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();

        let params = mixer.params_for(&store, &state).unwrap();
        let closed = params.mixing_gradient(&q);

        let mut g = Graph::new();
        let qi = g.input(Tensor::matrix(1, n, q.clone()).unwrap());
        let si = g.input(Tensor::matrix(1, state_dim, state).unwrap());
        let m = mixer.forward(&mut g, &store, qi, si).unwrap();
        let total = g.sum(m.q_tot).unwrap();
        let auto = g.grad_wrt(total, &[qi]).unwrap().remove(0);
        let pre = g.value(m.pre).data();
        if pre.iter().any(|&p| p < 0.0) && pre.iter().any(|&p| p > 0.0) {
            report.mixed_sign_draws += 1;
        }
        for (a, b) in closed.iter().zip(auto.data()) {
            let e = (a - b).abs() / a.abs().max(b.abs()).max(1e-300);
            report.max_rel_err = report.max_rel_err.max(if a == b { 0.0 } else { e });
        }
    }
    report
}

/// Reference value of the raw closed-form weight, written out from the
/// formula independently of the library.
pub fn reference_raw_weight(q: f64, y: f64, q_star: f64, pi: &[f64], f: &[f64], clamp: f64, floor: f64) -> f64 {
    if q > y {
        return 0.0;
    }
    let mut bracket = -1.0;
    for (p, d) in pi.iter().zip(f) {
        bracket += (1.0 - p) / if *d > floor { *d } else { floor };
    }
    if bracket < 0.0 {
        bracket = 0.0;
    }
    let mut gap = q_star - q;
    if gap > clamp {
        gap = clamp;
    }
    if gap < -clamp {
        gap = -clamp;
    }
    (y - q) * gap.exp() * bracket
}

/// Magnitude of the terms in the reference weight before the `− 1`
/// cancellation, for rounding tolerances.
pub fn reference_scale(q: f64, y: f64, q_star: f64, pi: &[f64], f: &[f64], clamp: f64, floor: f64) -> f64 {
    let sum: f64 = pi.iter().zip(f).map(|(p, d)| (1.0 - p) / d.max(floor)).sum();
    ((y - q).abs() * (q_star - q).clamp(-clamp, clamp).exp() * (sum + 1.0)).max(1.0)
}

pub fn remix_default() -> RemixWeight {
    RemixWeight::from_config(&SchemeConfig::default()).unwrap()
}

pub fn one_transition(q: f64, y: f64, q_star: f64, pi: &[f64], f: &[f64]) -> BatchEval {
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

pub fn raw_weight(q: f64, y: f64, q_star: f64, pi: &[f64], f: &[f64]) -> f64 {
    remix_raw_weights(&one_transition(q, y, q_star, pi, f), &remix_default()).raw[0]
}

/// Seeded sweep over the branch properties of the closed-form weight.
/// Returns `(property, cases, failures)`.
pub fn weight_branch_sweep(cases: usize, seed: u64) -> Vec<(&'static str, usize, usize)> {
    use remix_core::weighting::{OptimisticWeight, Uniform, WeightScheme};
    let mut rng = rng(seed);
    let mut fails = [0usize; 6];
    let bracket = |rng: &mut ChaCha8Rng| {
        let n = rng.gen_range(2..6);
        let pi: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.5)).collect();
        let f: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
        (pi, f)
    };
    for _ in 0..cases {
        let q = rng.gen_range(-10.0..10.0);
        let (pi, f) = bracket(&mut rng);
        let d = rng.gen_range(-5.0..5.0);

        let over = rng.gen_range(1e-9..50.0);
        if raw_weight(q, q - over, q + d, &pi, &f) != 0.0 {
            fails[0] += 1;
        }

        let e = rng.gen_range(1e-3..20.0);
        let de = rng.gen_range(1e-6..20.0);
        if raw_weight(q, q + e + de, q + d, &pi, &f) <= raw_weight(q, q + e, q + d, &pi, &f) {
            fails[1] += 1;
        }

        let d1 = rng.gen_range(-19.0..18.0);
        let dd = rng.gen_range(1e-6..1.0);
        if raw_weight(q, q + e, q + d1 + dd, &pi, &f) <= raw_weight(q, q + e, q + d1, &pi, &f) {
            fails[2] += 1;
        }

        let j = rng.gen_range(0..pi.len());
        let mut f2 = f.clone();
        f2[j] += rng.gen_range(1e-6..2.0);
        if raw_weight(q, q + e, q + d, &pi, &f2) >= raw_weight(q, q + e, q + d, &pi, &f) {
            fails[3] += 1;
        }

        let n = rng.gen_range(1..5);
        let len = rng.gen_range(1..20);
        let mut draw = |k: usize, lo: f64, hi: f64| -> Vec<f64> { (0..k).map(|_| rng.gen_range(lo..hi)).collect() };
        let b = BatchEval {
            n_agents: n,
            q_tot: draw(len, -10.0, 10.0),
            target: draw(len, -10.0, 10.0),
            q_star: draw(len, -10.0, 10.0),
            pi: draw(len * n, 0.0, 1.0),
            f_grad: draw(len * n, 0.0, 3.0),
            greedy_match: (0..len).map(|i| i % 2 == 0).collect(),
        };
        if OptimisticWeight::new(1.0).unwrap().weights(&b).normalized != Uniform.weights(&b).normalized {
            fails[4] += 1;
        }
        let w = remix_raw_weights(&b, &remix_default());
        for i in 0..len {
            let args = (
                b.q_tot[i],
                b.target[i],
                b.q_star[i],
                &b.pi[i * n..(i + 1) * n],
                &b.f_grad[i * n..(i + 1) * n],
            );
            let want = reference_raw_weight(args.0, args.1, args.2, args.3, args.4, 20.0, 1e-6);
            let scale = reference_scale(args.0, args.1, args.2, args.3, args.4, 20.0, 1e-6);
            if (w.raw[i] - want).abs() > 1e-12 * scale {
                fails[5] += 1;
                break;
            }
        }
    }
    let names = [
        "zero when Q_k > target",
        "increasing in Bellman error",
        "increasing in Q* - Q_k",
        "decreasing in each f'",
        "ow(1) equals uniform",
        "matches reference formula",
    ];
    names.into_iter().zip(fails).map(|(n, f)| (n, cases, f)).collect()
}
