use std::f64::consts::PI;
use std::sync::Arc;

use ppselect::geometry::{make_quadrature, synth_covariates};
use ppselect::secondorder::{contrast, default_r_grid, k_inhom, min_contrast_thomas, two_step_fit};
use ppselect::simulate::{calibrate_intercept, sample_poisson, sample_thomas, thomas_k};
use ppselect::{rng, CovariateField, Grid, LogLinearModel, PointPattern, QuadratureScheme, ThomasParams, Window};
use proptest::prelude::*;

/// The 250 × 125 window with one synthetic covariate and a flat model of
/// `n` expected points.
fn homogeneous(n: f64) -> (CovariateField, Arc<QuadratureScheme>, LogLinearModel) {
    let w = Window::new(0.0, 250.0, 0.0, 125.0).unwrap();
    let grid = Grid::covering(&w, 201, 101).unwrap();
    let field = synth_covariates(1, 1, &grid, 20.0).unwrap();
    let quad = Arc::new(make_quadrature(&field, &w).unwrap());
    let model = calibrate_intercept(&LogLinearModel::new(0.0, vec![0.0]).unwrap(), &quad, n).unwrap();
    (field, quad, model)
}

#[test]
fn poisson_k_is_close_to_pi_r_squared() {
    let (field, quad, model) = homogeneous(500.0);
    let r = [0.0, 2.0, 5.0, 10.0];
    let reps = 200;
    let mut sums = [0.0; 4];
    let mut squares = [0.0; 4];
    for i in 0..reps {
        let pat = sample_poisson(&model, &quad, &mut rng::stream(501, i)).unwrap();
        let k = k_inhom(&pat, &model, &field, &r).unwrap();
        for t in 0..4 {
            sums[t] += k.k[t];
            squares[t] += k.k[t] * k.k[t];
        }
    }
    assert_eq!(sums[0], 0.0);
    for t in 1..4 {
        let mean = sums[t] / reps as f64;
        let se = ((squares[t] / reps as f64 - mean * mean) / (reps - 1) as f64).sqrt();
        let target = PI * r[t] * r[t];
        assert!((mean - target).abs() <= 4.0 * se, "r={}: mean {mean}, target {target}, se {se}", r[t]);
    }
}

#[test]
fn homogeneous_thomas_k_exceeds_poisson_k() {
    let (field, quad, model) = homogeneous(250.0);
    let thomas = ThomasParams::new(4e-3, 1.5).unwrap();
    let above = (0..200)
        .filter(|&i| {
            let pat = sample_thomas(&model, &thomas, &quad, &mut rng::stream(502, i)).unwrap();
            let k = k_inhom(&pat, &model, &field, &[0.0, 5.0]).unwrap();
            k.k[1] > PI * 25.0
        })
        .count();
    assert!(above >= 190, "{above}/200");
}

#[test]
fn homogeneous_thomas_two_step_recovers_parameters() {
    let (field, quad, model) = homogeneous(250.0);
    let truth = ThomasParams::new(4e-3, 1.5).unwrap();
    let mut kappas = Vec::new();
    let mut sigmas = Vec::new();
    for i in 0..100 {
        let pat = sample_thomas(&model, &truth, &quad, &mut rng::stream(503, i)).unwrap();
        let spec = two_step_fit(&pat, &field, &model).unwrap();
        match spec.pcf {
            ppselect::criteria::Pcf::Thomas(t) => {
                kappas.push(t.kappa);
                sigmas.push(t.sigma);
            }
            ppselect::criteria::Pcf::Poisson => panic!("expected a Thomas model"),
        }
    }
    kappas.sort_by(f64::total_cmp);
    sigmas.sort_by(f64::total_cmp);
    let (mk, ms) = (0.5 * (kappas[49] + kappas[50]), 0.5 * (sigmas[49] + sigmas[50]));
    assert!(mk >= 2e-3 && mk <= 8e-3, "median kappa {mk}");
    assert!((ms / 1.5 - 1.0).abs() <= 0.5, "median sigma {ms}");
}

fn random_pattern(points: Vec<(f64, f64)>) -> PointPattern {
    let w = Window::new(0.0, 30.0, 0.0, 20.0).unwrap();
    PointPattern::new(points.into_iter().map(|(x, y)| [x, y]).collect(), w).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn k_hat_is_non_decreasing(
        points in prop::collection::vec((0.0f64..30.0, 0.0f64..20.0), 2..80),
        slope in -1.0f64..1.0,
    ) {
        let w = Window::new(0.0, 30.0, 0.0, 20.0).unwrap();
        let grid = Grid::covering(&w, 30, 20).unwrap();
        let field = synth_covariates(5, 1, &grid, 3.0).unwrap();
        let model = LogLinearModel::new(-2.0, vec![slope]).unwrap();
        let pat = random_pattern(points);
        let k = k_inhom(&pat, &model, &field, &default_r_grid(10.0)).unwrap();
        prop_assert!(k.k.windows(2).all(|p| p[1] >= p[0]));
        prop_assert!(k.k.iter().all(|v| v.is_finite() && *v >= 0.0));
        prop_assert_eq!(k.intensity_used.len(), pat.len());
    }

    #[test]
    fn min_contrast_beats_arbitrary_parameters(
        kappa in 1e-3f64..5e-2,
        sigma in 0.5f64..5.0,
        noise in prop::collection::vec(0.8f64..1.2, 128),
        probe_kappa in 1e-4f64..1.0,
        probe_sigma in 0.1f64..20.0,
    ) {
        let truth = ThomasParams::new(kappa, sigma).unwrap();
        let r = default_r_grid(25.0);
        let k_est = ppselect::secondorder::KEstimate {
            k: r.iter().zip(&noise).map(|(&x, e)| thomas_k(&truth, x) * e).collect(),
            r,
            correction: ppselect::secondorder::EdgeCorrection::Translation,
            intensity_used: vec![],
        };
        let fit = min_contrast_thomas(&k_est, 0.0, 25.0, 0.25).unwrap();
        let best = contrast(&k_est, 0.0, 25.0, 0.25, &fit);
        let probe = ThomasParams::new(probe_kappa, probe_sigma).unwrap();
        prop_assert!(best <= contrast(&k_est, 0.0, 25.0, 0.25, &probe) + 1e-12);
        prop_assert!(best <= contrast(&k_est, 0.0, 25.0, 0.25, &truth) + 1e-12);
    }
}

#[test]
fn two_step_fit_is_deterministic() {
    let (field, quad, model) = homogeneous(250.0);
    let thomas = ThomasParams::new(4e-3, 1.5).unwrap();
    let pat = sample_thomas(&model, &thomas, &quad, &mut rng::stream(504, 0)).unwrap();
    assert_eq!(
        two_step_fit(&pat, &field, &model).unwrap(),
        two_step_fit(&pat, &field, &model).unwrap()
    );
}
