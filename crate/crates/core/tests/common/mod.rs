#![allow(dead_code)]

use std::sync::Arc;

use ppselect::geometry::{make_quadrature, synth_covariates};
use ppselect::likelihood::{build_fit_data, FitData};
use ppselect::simulate::{calibrate_intercept, sample_poisson};
use ppselect::{rng, CovariateField, Grid, LogLinearModel, PointPattern, QuadratureScheme, Window};

/// 40 × 20 window with unit cells and `p` synthetic covariates.
pub fn small_field(seed: u64, p: usize) -> (CovariateField, Arc<QuadratureScheme>) {
    let w = Window::new(0.0, 40.0, 0.0, 20.0).unwrap();
    let grid = Grid::covering(&w, 40, 20).unwrap();
    let field = synth_covariates(seed, p, &grid, 4.0).unwrap();
    let quad = Arc::new(make_quadrature(&field, &w).unwrap());
    (field, quad)
}

/// Poisson pattern with `n` expected points and coefficients `beta`
/// (padded with zeros).
pub fn poisson_data(
    quad: &Arc<QuadratureScheme>,
    beta: &[f64],
    n: f64,
    seed: u64,
) -> (LogLinearModel, PointPattern, FitData) {
    let mut b = beta.to_vec();
    b.resize(quad.p(), 0.0);
    let model = calibrate_intercept(&LogLinearModel::new(0.0, b).unwrap(), quad, n).unwrap();
    let pattern = sample_poisson(&model, quad, &mut rng::stream(seed, 0)).unwrap();
    let fit = build_fit_data(&pattern, quad.clone(), 1.0).unwrap();
    (model, pattern, fit)
}

/// `−log ℓ` from first principles: `−Σ n_j η_j + p Σ v_j exp(η_j)`.
pub fn neg_loglik(fit: &FitData, theta: &[f64]) -> f64 {
    let quad = fit.quad();
    let mut value = 0.0;
    for j in 0..quad.len() {
        let eta = eta_at(quad, theta, j);
        value += -fit.counts()[j] * eta + fit.p_thin() * quad.weights()[j] * eta.exp();
    }
    value
}

pub fn eta_at(quad: &QuadratureScheme, theta: &[f64], j: usize) -> f64 {
    theta[0]
        + theta[1..]
            .iter()
            .enumerate()
            .map(|(k, b)| b * quad.covariate(k)[j])
            .sum::<f64>()
}
