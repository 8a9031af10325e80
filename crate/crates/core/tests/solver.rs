mod common;

use common::{neg_loglik, poisson_data, small_field};
use ppselect::likelihood::{fit_unpenalized, score, FitData};
use ppselect::solver::{
    adaptive_weights, pgd_solve, prox_hard, prox_soft, solve_path, PathConfig, PenaltyKind,
    PenaltySpec, StepPolicy,
};
use ppselect::LogLinearModel;
use proptest::prelude::*;

fn tight(kind: PenaltyKind, grid: Vec<f64>) -> PathConfig {
    let mut cfg = PathConfig::new(kind, grid).unwrap();
    cfg.tol = 1e-11;
    cfg.max_iter = 200_000;
    cfg.stall_window = 20_000;
    cfg
}

fn start(fit: &FitData) -> LogLinearModel {
    let area = fit.quad().total_weight();
    LogLinearModel::intercept_only(fit.p(), (fit.n_points() as f64 / area).ln())
}

fn objective(fit: &FitData, theta: &[f64], lambda: f64, weights: &[f64]) -> f64 {
    neg_loglik(fit, theta)
        + lambda * theta[1..].iter().zip(weights).map(|(b, w)| w * b.abs()).sum::<f64>()
}

/// Cyclic coordinate descent with exact one-dimensional minimization by
/// bisection on the subgradient.
fn coordinate_descent_l1(fit: &FitData, lambda: f64, weights: &[f64]) -> Vec<f64> {
    let quad = fit.quad();
    let n = quad.len();
    let p = fit.p();
    let mut theta = start(fit).to_vector();
    let mut eta: Vec<f64> = (0..n).map(|j| common::eta_at(quad, &theta, j)).collect();
    let column = |k: usize| -> Vec<f64> {
        if k == 0 {
            vec![1.0; n]
        } else {
            quad.covariate(k - 1).to_vec()
        }
    };
    let columns: Vec<Vec<f64>> = (0..=p).map(column).collect();
    for _sweep in 0..5000 {
        let mut change = 0.0f64;
        for k in 0..=p {
            let x = &columns[k];
            let a: f64 = (0..n).map(|j| fit.counts()[j] * x[j]).sum();
            let c: Vec<f64> = (0..n)
                .map(|j| fit.p_thin() * quad.weights()[j] * (eta[j] - x[j] * theta[k]).exp())
                .collect();
            let new = if k == 0 {
                (a / c.iter().sum::<f64>()).ln()
            } else {
                let pen = lambda * weights[k - 1];
                let d = |t: f64| -a + (0..n).map(|j| c[j] * x[j] * (x[j] * t).exp()).sum::<f64>();
                let d0 = d(0.0);
                if d0.abs() <= pen {
                    0.0
                } else {
                    // Root of d(t) + sign·pen, with sign the side of the minimizer.
                    let shift = if d0 < -pen { pen } else { -pen };
                    let f = |t: f64| d(t) + shift;
                    let (mut lo, mut hi) = if d0 < -pen { (0.0, 1.0) } else { (-1.0, 0.0) };
                    while f(lo) > 0.0 {
                        lo -= 2.0 * (hi - lo);
                    }
                    while f(hi) < 0.0 {
                        hi += 2.0 * (hi - lo);
                    }
                    for _ in 0..200 {
                        let mid = 0.5 * (lo + hi);
                        if f(mid) < 0.0 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    0.5 * (lo + hi)
                }
            };
            let delta = new - theta[k];
            if delta != 0.0 {
                for j in 0..n {
                    eta[j] += delta * x[j];
                }
                theta[k] = new;
            }
            change = change.max(delta.abs());
        }
        if change < 1e-13 {
            break;
        }
    }
    theta
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hard_threshold_minimizes_its_objective(x in -5.0f64..5.0, t in 1e-3f64..4.0) {
        // min_b ½(b − x)² + t·1(b ≠ 0) with threshold √(2t).
        let b = prox_hard(&[x], &[(2.0 * t).sqrt()])[0];
        let obj = |b: f64| 0.5 * (b - x).powi(2) + if b != 0.0 { t } else { 0.0 };
        let best = (-60_000..=60_000)
            .map(|i| obj(i as f64 * 1e-4))
            .fold(obj(x), f64::min);
        prop_assert!(obj(b) <= best + 1e-12);
        prop_assert!(b == 0.0 || b == x);
    }

    #[test]
    fn soft_threshold_minimizes_its_objective(x in -5.0f64..5.0, t in 0.0f64..4.0) {
        let b = prox_soft(&[x], &[t])[0];
        let obj = |b: f64| 0.5 * (b - x).powi(2) + t * b.abs();
        let best = (-60_000..=60_000).map(|i| obj(i as f64 * 1e-4)).fold(f64::INFINITY, f64::min);
        prop_assert!(obj(b) <= best + 1e-12);
        prop_assert!(b.abs() <= x.abs());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn l1_solution_matches_coordinate_descent(
        seed in 0u64..1000,
        b1 in 0.3f64..1.5,
        lambda in 0.05f64..5.0,
    ) {
        let (_, quad) = small_field(seed, 4);
        let (_, _, fit) = poisson_data(&quad, &[b1, -0.5], 200.0, seed + 1);
        let weights = adaptive_weights(&fit_unpenalized(&fit).unwrap());
        let penalty = PenaltySpec::new(PenaltyKind::L1, lambda, weights.clone()).unwrap();
        let cfg = tight(PenaltyKind::L1, vec![lambda]);
        let out = pgd_solve(&fit, &penalty, &start(&fit), &cfg).unwrap();
        let oracle = coordinate_descent_l1(&fit, lambda, &weights);
        let got = out.model.to_vector();
        let (o_obj, g_obj) = (
            objective(&fit, &oracle, lambda, &weights),
            objective(&fit, &got, lambda, &weights),
        );
        prop_assert!(g_obj <= o_obj + 1e-7 * o_obj.abs(), "objective {g_obj} vs oracle {o_obj}");
        for (g, o) in got.iter().zip(&oracle) {
            prop_assert!((g - o).abs() <= 1e-3, "coefficients {got:?} vs oracle {oracle:?}");
        }
    }

    #[test]
    fn l1_solution_satisfies_subgradient_conditions(
        seed in 0u64..1000,
        lambda in 0.05f64..20.0,
    ) {
        let (_, quad) = small_field(seed, 5);
        let (_, _, fit) = poisson_data(&quad, &[1.0, 0.5], 200.0, seed + 7);
        let weights = adaptive_weights(&fit_unpenalized(&fit).unwrap());
        let penalty = PenaltySpec::new(PenaltyKind::L1, lambda, weights.clone()).unwrap();
        let out = pgd_solve(&fit, &penalty, &start(&fit), &tight(PenaltyKind::L1, vec![lambda])).unwrap();
        let s = score(&fit, &out.model).unwrap();
        prop_assert!(s[0].abs() <= 1e-3);
        for (j, (&b, &w)) in out.model.beta.iter().zip(&weights).enumerate() {
            let bound = lambda * w;
            let tol = 1e-3 * bound.max(1.0);
            if b == 0.0 {
                prop_assert!(s[j + 1].abs() <= bound + tol, "zero coefficient {j}: |{}| > {bound}", s[j + 1]);
            } else {
                prop_assert!((s[j + 1] - bound * b.signum()).abs() <= tol, "active coefficient {j}");
            }
        }
    }

    #[test]
    fn l0_solution_is_a_fixed_point_of_the_prox_map(
        seed in 0u64..1000,
        lambda in 0.05f64..20.0,
    ) {
        let (_, quad) = small_field(seed, 5);
        let (_, _, fit) = poisson_data(&quad, &[1.0, 0.5], 200.0, seed + 11);
        let weights = adaptive_weights(&fit_unpenalized(&fit).unwrap());
        let penalty = PenaltySpec::new(PenaltyKind::L0, lambda, weights.clone()).unwrap();
        let cfg = tight(PenaltyKind::L0, vec![lambda]);
        let gamma = match cfg.step {
            StepPolicy::Fixed(g) => g,
            other => panic!("unexpected step policy {other:?}"),
        };
        let out = pgd_solve(&fit, &penalty, &start(&fit), &cfg).unwrap();
        prop_assert!(out.diagnostics.converged);
        let s = score(&fit, &out.model).unwrap();
        prop_assert!(s[0].abs() <= 1e-3);
        for (j, (&b, &w)) in out.model.beta.iter().zip(&weights).enumerate() {
            let xi = (2.0 * gamma * lambda * w).sqrt();
            if b == 0.0 {
                prop_assert!((gamma * s[j + 1]).abs() <= xi * (1.0 + 1e-6));
            } else {
                prop_assert!(s[j + 1].abs() <= 1e-3, "active coefficient {j} has score {}", s[j + 1]);
                prop_assert!(b.abs() > xi);
            }
        }
    }

    #[test]
    fn zero_penalty_recovers_unpenalized_fit(seed in 0u64..1000, kind_l0 in any::<bool>()) {
        let kind = if kind_l0 { PenaltyKind::L0 } else { PenaltyKind::L1 };
        let (_, quad) = small_field(seed, 4);
        let (_, _, fit) = poisson_data(&quad, &[0.8, 0.4], 200.0, seed + 3);
        let mle = fit_unpenalized(&fit).unwrap();
        let penalty = PenaltySpec::new(kind, 0.0, vec![1.0; 4]).unwrap();
        let out = pgd_solve(&fit, &penalty, &start(&fit), &tight(kind, vec![0.0])).unwrap();
        for (a, b) in out.model.to_vector().iter().zip(mle.to_vector()) {
            prop_assert!((a - b).abs() <= 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn warm_path_matches_cold_solves(seed in 0u64..1000) {
        let (_, quad) = small_field(seed, 4);
        let (_, _, fit) = poisson_data(&quad, &[1.0, -0.5], 200.0, seed + 5);
        let weights = adaptive_weights(&fit_unpenalized(&fit).unwrap());
        let grid = ppselect::solver::log_grid(50.0, 0.01, 8).unwrap();
        let cfg = tight(PenaltyKind::L1, grid.clone());
        let path = solve_path(&fit, PenaltyKind::L1, &weights, &cfg).unwrap();
        for (i, &lambda) in grid.iter().enumerate() {
            let penalty = PenaltySpec::new(PenaltyKind::L1, lambda, weights.clone()).unwrap();
            let cold = pgd_solve(&fit, &penalty, &start(&fit), &tight(PenaltyKind::L1, vec![lambda])).unwrap();
            let (w_obj, c_obj) = (path.diagnostics[i].objective, cold.diagnostics.objective);
            prop_assert!((w_obj - c_obj).abs() <= 1e-8 * c_obj.abs().max(1.0));
            for (a, b) in path.models[i].to_vector().iter().zip(cold.model.to_vector()) {
                prop_assert!((a - b).abs() <= 1e-3);
            }
        }
    }
}

#[test]
fn path_supports_shrink_with_lambda_for_l1() {
    let (_, quad) = small_field(3, 6);
    let (_, _, fit) = poisson_data(&quad, &[1.2, 0.6], 300.0, 4);
    let weights = adaptive_weights(&fit_unpenalized(&fit).unwrap());
    let grid = ppselect::solver::log_grid(1e3, 1e-3, 20).unwrap();
    let path = solve_path(&fit, PenaltyKind::L1, &weights, &PathConfig::new(PenaltyKind::L1, grid).unwrap()).unwrap();
    assert!(path.support(0).is_empty());
    assert_eq!(path.support(path.len() - 1).len(), 6);
    assert!(path.diagnostics.iter().all(|d| d.objective.is_finite()));
}
