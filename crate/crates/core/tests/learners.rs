use approx::assert_abs_diff_eq;
use catgen_core::learners::{
    fit_learner, fit_super_learner, solve_simplex, solve_simplex_weights, LearnerSpec, Link, LINK_EPSILON,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn objective(p: &DMatrix<f64>, t: &[f64], w: &[f64]) -> f64 {
    (0..p.nrows())
        .map(|i| {
            let fit: f64 = (0..p.ncols()).map(|k| p[(i, k)] * w[k]).sum();
            (fit - t[i]).powi(2)
        })
        .sum()
}

/// Minimum of the objective over all simplex points with coordinates on a
/// grid of the given resolution (K = 2 or 3).
fn simplex_grid_min(p: &DMatrix<f64>, t: &[f64], steps: usize) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..=steps {
        let w0 = i as f64 / steps as f64;
        if p.ncols() == 2 {
            best = best.min(objective(p, t, &[w0, 1.0 - w0]));
            continue;
        }
        for j in 0..=(steps - i) {
            let w1 = j as f64 / steps as f64;
            best = best.min(objective(p, t, &[w0, w1, (1.0 - w0 - w1).max(0.0)]));
        }
    }
    best
}

#[test]
fn random_three_column_problem_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = DMatrix::from_fn(200, 3, |_, _| rng.random::<f64>());
    let t: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
    let w = solve_simplex_weights(&p, &t).unwrap();
    assert!(w.iter().all(|x| *x >= 0.0));
    assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
    let grid = simplex_grid_min(&p, &t, 200);
    let ours = objective(&p, &t, &w);
    assert!(ours <= grid + 1e-6, "solver {ours} vs grid {grid}");
    assert!(grid - ours < 1e-2, "grid minimum should be close to the optimum");
}

#[test]
fn identical_members_share_weight_equally() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = DMatrix::from_fn(120, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let y: Vec<f64> = (0..120).map(|i| x[(i, 0)] - 0.5 * x[(i, 1)] + 0.1 * rng.random::<f64>()).collect();
    let library = vec![LearnerSpec::GlmMainEffects, LearnerSpec::GlmMainEffects];
    let ens = fit_super_learner(&x, &y, &library, Link::Identity, 5, 3).unwrap();
    assert_eq!(ens.weights, vec![0.5, 0.5]);

    let member = fit_learner(&x, &y, &LearnerSpec::GlmMainEffects, Link::Identity, 0).unwrap();
    let column = member.predict(&x).unwrap();
    let p = DMatrix::from_fn(120, 2, |i, _| column[i]);
    let grid = simplex_grid_min(&p, &y, 100);
    assert!(objective(&p, &y, &ens.weights) <= grid + 1e-9);
}

#[test]
fn exact_linear_member_dominates_intercept() {
    let x = DMatrix::from_fn(100, 2, |i, j| ((i * 7 + j * 3) % 13) as f64 - 6.0);
    let y: Vec<f64> = (0..100).map(|i| 0.5 + 2.0 * x[(i, 0)] - x[(i, 1)]).collect();
    let library = vec![LearnerSpec::InterceptOnly, LearnerSpec::GlmMainEffects];
    let ens = fit_super_learner(&x, &y, &library, Link::Identity, 5, 1).unwrap();
    assert!(ens.weights[1] >= 0.99, "{:?}", ens.weights);
    let single = fit_super_learner(&x, &y, &library[1..], Link::Identity, 5, 1).unwrap();
    assert_eq!(single.weights, vec![1.0]);
}

#[test]
fn super_learner_is_deterministic_and_library_order_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = DMatrix::from_fn(300, 3, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let y: Vec<f64> = (0..300).map(|i| f64::from(u8::from(rng.random::<f64>() < 0.3 + 0.4 * x[(i, 0)].abs()))).collect();
    let library = vec![
        LearnerSpec::GlmMainEffects,
        LearnerSpec::RidgePoly2 { lambda: 1.0 },
        LearnerSpec::BoostedStumps { rounds: 30, learning_rate: 0.1, max_depth: 2 },
        LearnerSpec::RandomForest { trees: 20, min_leaf: 5, mtry: None },
    ];
    let a = fit_super_learner(&x, &y, &library, Link::Logit, 5, 9).unwrap();
    let b = fit_super_learner(&x, &y, &library, Link::Logit, 5, 9).unwrap();
    assert_eq!(a, b);
    let preds = a.predict(&x).unwrap();
    assert!(preds.iter().all(|p| *p >= LINK_EPSILON && *p <= 1.0 - LINK_EPSILON));

    let order = [2, 0, 3, 1];
    let permuted: Vec<LearnerSpec> = order.iter().map(|&k| library[k].clone()).collect();
    let c = fit_super_learner(&x, &y, &permuted, Link::Logit, 5, 9).unwrap();
    for (pos, &k) in order.iter().enumerate() {
        assert_abs_diff_eq!(c.weights[pos], a.weights[k], epsilon = 1e-8);
        assert_eq!(c.cv_risk[pos], a.cv_risk[k]);
    }
}

/// Stump boosting with thresholds restricted to a 50-point grid and an
/// exhaustive threshold search each round.
fn grid_stump_boosting(x: &[f64], y: &[f64], rounds: usize, rate: f64) -> impl Fn(f64) -> f64 {
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let thresholds: Vec<f64> = (1..=50).map(|k| lo + (hi - lo) * k as f64 / 51.0).collect();
    let base = y.iter().sum::<f64>() / y.len() as f64;
    let mut fitted = vec![base; y.len()];
    let mut stumps: Vec<(f64, f64, f64)> = Vec::new();
    for _ in 0..rounds {
        let r: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        let mut best = (f64::INFINITY, 0.0, 0.0, 0.0);
        for &c in &thresholds {
            let (mut sl, mut nl, mut sr, mut nr) = (0.0, 0.0, 0.0, 0.0);
            for (xi, ri) in x.iter().zip(&r) {
                if *xi <= c {
                    sl += ri;
                    nl += 1.0;
                } else {
                    sr += ri;
                    nr += 1.0;
                }
            }
            let (ml, mr) = (if nl > 0.0 { sl / nl } else { 0.0 }, if nr > 0.0 { sr / nr } else { 0.0 });
            let sse: f64 = x.iter().zip(&r).map(|(xi, ri)| (ri - if *xi <= c { ml } else { mr }).powi(2)).sum();
            if sse < best.0 {
                best = (sse, c, ml, mr);
            }
        }
        let (_, c, ml, mr) = best;
        for (f, xi) in fitted.iter_mut().zip(x) {
            *f += rate * if *xi <= c { ml } else { mr };
        }
        stumps.push((c, ml, mr));
    }
    move |v| base + stumps.iter().map(|(c, l, r)| rate * if v <= *c { l } else { r }).sum::<f64>()
}

#[test]
fn boosting_is_competitive_with_an_independent_stump_booster() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let mut draw = |n: usize| {
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let y: Vec<f64> = x.iter().map(|v| (3.0 * v).sin() + noise.sample(&mut rng)).collect();
        (x, y)
    };
    let (x, y) = draw(2000);
    let (xt, yt) = draw(1000);
    let spec = LearnerSpec::BoostedStumps { rounds: 500, learning_rate: 0.1, max_depth: 2 };
    let model = fit_learner(&DMatrix::from_column_slice(2000, 1, &x), &y, &spec, Link::Identity, 0).unwrap();
    let ours = model.predict(&DMatrix::from_column_slice(1000, 1, &xt)).unwrap();
    let mse = ours.iter().zip(&yt).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / 1000.0;
    let oracle = grid_stump_boosting(&x, &y, 500, 0.1);
    let oracle_mse = xt.iter().zip(&yt).map(|(v, t)| (oracle(*v) - t).powi(2)).sum::<f64>() / 1000.0;
    assert!(mse <= 2.0 * oracle_mse, "boosting test MSE {mse} vs oracle {oracle_mse}");
}

#[test]
fn forest_and_boosting_logit_predictions_are_probabilities() {
    let x = DMatrix::from_fn(80, 1, |i, _| i as f64);
    let y: Vec<f64> = (0..80).map(|i| f64::from(u8::from(i >= 40))).collect();
    for spec in [
        LearnerSpec::BoostedStumps { rounds: 50, learning_rate: 0.3, max_depth: 1 },
        LearnerSpec::RandomForest { trees: 10, min_leaf: 1, mtry: None },
    ] {
        let p = fit_learner(&x, &y, &spec, Link::Logit, 4).unwrap().predict(&x).unwrap();
        assert!(p.iter().all(|q| *q > 0.0 && *q < 1.0), "{spec:?}");
        assert!(p[0] < 0.5 && p[79] > 0.5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn simplex_solution_is_feasible_and_beats_every_vertex(
        seed in any::<u64>(),
        k in 1usize..6,
        n in 5usize..40,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = DMatrix::from_fn(n, k, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        let t: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let sol = solve_simplex(&p, &t).unwrap();
        prop_assert!(sol.weights.iter().all(|w| *w >= 0.0));
        prop_assert!((sol.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        let tol = 1e-8 * n as f64;
        for j in 0..k {
            let mut vertex = vec![0.0; k];
            vertex[j] = 1.0;
            prop_assert!(sol.objective <= objective(&p, &t, &vertex) + tol);
        }
        prop_assert!(sol.objective <= objective(&p, &t, &vec![1.0 / k as f64; k]) + tol);
    }
}
