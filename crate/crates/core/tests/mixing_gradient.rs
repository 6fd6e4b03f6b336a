mod common;

use common::{mixing_gradient_check, random_tensor, rng};
use rand::Rng;
use remix_core::factor::{mixing_gradient_rows, Mixer};
use remix_core::tensor::{Graph, ParamStore};

#[test]
fn closed_form_matches_autodiff_on_random_draws() {
    let r = mixing_gradient_check(1000, 7);
    println!("{r:?}");
    assert!(r.max_rel_err < 1e-8, "{r:?}");
    assert!(r.mixed_sign_draws >= 100, "too few mixed-sign pre-activations: {r:?}");
}

#[test]
fn batched_rows_match_autodiff() {
    let mut rng = rng(8);
    for _ in 0..50 {
        let (n, sd, m, rows) = (
            rng.gen_range(1..5),
            rng.gen_range(1..5),
            rng.gen_range(1..7),
            rng.gen_range(1..6),
        );
        let mixer = Mixer::new(n, sd, m, 3);
        let mut store = ParamStore::new();
        mixer.init(&mut store, &mut rng);
        let q = random_tensor(&[rows, n], &mut rng);
        let s = random_tensor(&[rows, sd], &mut rng);
        let mut g = Graph::new();
        let (qi, si) = (g.input(q), g.input(s));
        let out = mixer.forward(&mut g, &store, qi, si).unwrap();
        let total = g.sum(out.q_tot).unwrap();
        let auto = g.grad_wrt(total, &[qi]).unwrap().remove(0);
        let rows_grad = mixing_gradient_rows(g.value(out.w1), g.value(out.pre), g.value(out.w2), n);
        for (a, b) in rows_grad.iter().zip(auto.data()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn gradient_is_non_negative() {
    let mut rng = rng(9);
    for _ in 0..200 {
        let mixer = Mixer::new(3, 4, 6, 3);
        let mut store = ParamStore::new();
        mixer.init(&mut store, &mut rng);
        let state: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let grad = mixer.params_for(&store, &state).unwrap().mixing_gradient(&q);
        assert!(grad.iter().all(|&x| x >= 0.0), "{grad:?}");
    }
}
