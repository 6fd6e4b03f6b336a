mod common;

use common::rng;
use rand::Rng;
use remix_core::env::MatrixGameConfig;
use remix_core::oracle::{
    boltzmann_gap, boltzmann_gap_check, discounted_distribution, discounted_state_distribution, exact_regret,
    exact_return, exhaustive_weight_search, jensen_trials, onpoliciness_ratio, project, random_action_counts,
    upper_bound_check, upper_bound_trials, value_iteration, AgentUtilities, ExactPolicy, TinyMdp, WeightSearchConfig,
};

/// `d(s')` by fixed-point iteration of `d = (1−γ)ρ0 + γ P_πᵀ d`, built from
/// the raw tables.
fn power_iteration(mdp: &TinyMdp, pi: &ExactPolicy) -> Vec<f64> {
    let mut d = mdp.initial().to_vec();
    for _ in 0..1_000_000 {
        let mut next: Vec<f64> = mdp.initial().iter().map(|x| (1.0 - mdp.gamma()) * x).collect();
        for (s, &ds) in d.iter().enumerate() {
            for u in 0..mdp.n_joint() {
                let p = pi.joint_prob(mdp, s, u);
                for (s2, t) in mdp.transition_row(s, u).iter().enumerate() {
                    next[s2] += mdp.gamma() * ds * p * t;
                }
            }
        }
        let delta = next.iter().zip(&d).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        d = next;
        if delta < 1e-16 {
            break;
        }
    }
    d
}

fn random_instance(seed: u64) -> (TinyMdp, ExactPolicy) {
    let mut rng = rng(seed);
    let counts = random_action_counts(27, &mut rng);
    let mdp = TinyMdp::random(rng.gen_range(1..=10), counts, rng.gen_range(0.1..0.95), &mut rng).unwrap();
    let pi = ExactPolicy::random(&mdp, &mut rng);
    (mdp, pi)
}

#[test]
fn linear_solve_matches_power_iteration() {
    for seed in 0..50 {
        let (mdp, pi) = random_instance(seed);
        let solved = discounted_state_distribution(&mdp, &pi).unwrap();
        let iterated = power_iteration(&mdp, &pi);
        for (a, b) in solved.iter().zip(&iterated) {
            assert!((a - b).abs() < 1e-8, "seed {seed}: {a} vs {b}");
        }
        let total: f64 = discounted_distribution(&mdp, &pi).unwrap().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn both_return_routes_agree() {
    for seed in 100..300 {
        let (mdp, pi) = random_instance(seed);
        let r = exact_return(&mdp, &pi).unwrap();
        assert!(r.discrepancy() < 1e-9, "seed {seed}: {r:?}");
    }
}

#[test]
fn bandit_regret_is_gap_over_one_minus_gamma() {
    let gamma = 0.9;
    let mdp = TinyMdp::new(1, vec![3], vec![1.0; 3], vec![1.0, 0.4, 0.7], gamma, vec![1.0]).unwrap();
    for (arm, reward) in [(0, 1.0), (1, 0.4), (2, 0.7)] {
        let regret = exact_regret(&mdp, &ExactPolicy::deterministic(&mdp, &[arm])).unwrap();
        let want = (1.0 - reward) / (1.0 - gamma);
        assert!((regret - want).abs() < 1e-9, "arm {arm}: {regret} vs {want}");
    }
}

#[test]
fn regret_is_non_negative_for_random_policies() {
    let mut rng = rng(5);
    let mut worst = f64::INFINITY;
    for _ in 0..1000 {
        let counts = random_action_counts(12, &mut rng);
        let mdp = TinyMdp::random(rng.gen_range(1..=6), counts, rng.gen_range(0.1..0.95), &mut rng).unwrap();
        let pi = ExactPolicy::random(&mdp, &mut rng);
        worst = worst.min(exact_regret(&mdp, &pi).unwrap());
    }
    assert!(worst >= -1e-9, "{worst}");
}

#[test]
fn optimal_values_satisfy_the_bellman_equation() {
    let (mdp, _) = random_instance(9);
    let opt = value_iteration(&mdp);
    let nj = mdp.n_joint();
    for s in 0..mdp.n_states() {
        for u in 0..nj {
            let backup: f64 = mdp.reward(s, u)
                + mdp.gamma()
                    * mdp
                        .transition_row(s, u)
                        .iter()
                        .zip(&opt.values)
                        .map(|(p, v)| p * v)
                        .sum::<f64>();
            assert!((opt.q[s * nj + u] - backup).abs() < 1e-9);
        }
    }
}

/// `max(q) − E_softmax[q]` for one raised entry `t` among `k − 1` zeros.
fn raised_entry_gap(t: f64, k: usize) -> f64 {
    t - t * t.exp() / (t.exp() + (k - 1) as f64)
}

#[test]
fn one_dimensional_gap_sweep() {
    let sweep = |k: usize| {
        (0..40_000)
            .map(|i| {
                let t = i as f64 * 5e-4;
                let mut q = vec![0.0; k];
                q[0] = t;
                let mut point = vec![0.0; k];
                point[0] = 1.0;
                let g = boltzmann_gap(&q, &point);
                assert!((g - raised_entry_gap(t, k)).abs() < 1e-12);
                g
            })
            .fold(0.0, f64::max)
    };
    for k in 2..=8 {
        let sup = sweep(k);
        assert!(sup < 1.0, "k = {k}: {sup}");
    }
    // Nine actions already push the gap past one.
    assert!(sweep(9) > 1.0);
}

#[test]
fn bound_checks_hold_on_smaller_samples() {
    let mut rng = rng(11);
    let gap = boltzmann_gap_check(5000, 8, &mut rng);
    assert!(gap.holds && gap.max_gap < 1.0, "{gap:?}");
    let jensen = jensen_trials(2000, &mut rng);
    assert_eq!(jensen.failures, 0, "{jensen:?}");
    let bound = upper_bound_trials(40, 8, &mut rng).unwrap();
    assert_eq!(bound.failures, 0, "{bound:?}");
}

#[test]
fn single_action_bound_is_the_slack_alone() {
    let mut rng = rng(12);
    for counts in [vec![1], vec![1, 1], vec![1, 1, 1]] {
        let mdp = TinyMdp::random(4, counts, 0.8, &mut rng).unwrap();
        let q_k = AgentUtilities::random(&mdp, 3.0, &mut rng);
        let b = upper_bound_check(&mdp, &q_k).unwrap();
        assert!(b.lhs.abs() < 1e-9);
        assert!((b.rhs - 1.0 / (1.0 - 0.8)).abs() < 1e-9, "{b:?}");
        assert!(b.holds && b.holds_without_slack);
    }
}

#[test]
fn onpoliciness_identities() {
    for seed in 20..40 {
        let (mdp, pi) = random_instance(seed);
        let d = discounted_distribution(&mdp, &pi).unwrap();
        let cells = d.len();
        if d.iter().all(|&x| x > 0.0) {
            let ratio = onpoliciness_ratio(&mdp, &pi, &d).unwrap();
            assert!(ratio.iter().all(|r| (r - 1.0).abs() < 1e-9));
        }
        let uniform = vec![1.0 / cells as f64; cells];
        let ratio = onpoliciness_ratio(&mdp, &pi, &uniform).unwrap();
        let mass: f64 = ratio.iter().zip(&uniform).map(|(r, m)| r * m).sum();
        assert!((mass - 1.0).abs() < 1e-9);
    }
}

#[test]
fn additive_game_is_fit_exactly_with_optimal_greedy_action() {
    let (a, b) = ([1.0, -2.0, 0.5], [0.0, 3.0, -1.0]);
    let game = MatrixGameConfig {
        n_agents: 2,
        n_actions: 3,
        payoff: (0..9).map(|i| a[i / 3] + b[i % 3]).collect(),
    };
    let p = project(&game, &[1.0 / 9.0; 9], &WeightSearchConfig::default()).unwrap();
    assert!(p.converged, "{p:?}");
    assert!(p.loss < 1e-12, "loss {}", p.loss);
    let best = (0..9)
        .max_by(|&i, &j| {
            p.mixer
                .q_tot(&game.joint_action(i))
                .total_cmp(&p.mixer.q_tot(&game.joint_action(j)))
        })
        .unwrap();
    assert_eq!(game.joint_action(best), vec![0, 1]);
}

#[test]
fn single_point_grid_is_the_uniform_projection() {
    let config = WeightSearchConfig {
        resolution: 1,
        ..WeightSearchConfig::default()
    };
    let r = exhaustive_weight_search(&MatrixGameConfig::default(), &config).unwrap();
    assert_eq!(r.landscape.len(), 1);
    assert_eq!(r.best_regret, r.uniform_regret);
    assert_eq!(r.improvement(), 0.0);
}
