//! Exact samplers for inhomogeneous Poisson and Thomas processes.
//!
//! Both samplers thin a homogeneous dominating process whose rate is the
//! maximum of the log-linear intensity over the quadrature nodes. Covariates
//! at a sampled location are taken from the containing grid cell, which is
//! the same value the quadrature sees.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{CovariateField, PointPattern, QuadratureScheme};
use crate::{Error, Result};

/// Parent intensity and Gaussian dispersion of a Thomas process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThomasParams {
    pub kappa: f64,
    pub sigma: f64,
}

impl ThomasParams {
    pub fn new(kappa: f64, sigma: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite() && sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Thomas parameters need kappa > 0 and sigma > 0, got ({kappa}, {sigma})"
            )));
        }
        Ok(Self { kappa, sigma })
    }
}

/// `ρ(u) = ω · exp(βᵀ z(u))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLinearModel {
    pub log_omega: f64,
    pub beta: Vec<f64>,
}

impl LogLinearModel {
    pub fn new(log_omega: f64, beta: Vec<f64>) -> Result<Self> {
        if !log_omega.is_finite() || beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("model parameters must be finite".into()));
        }
        Ok(Self { log_omega, beta })
    }

    pub fn intercept_only(p: usize, log_omega: f64) -> Self {
        Self {
            log_omega,
            beta: vec![0.0; p],
        }
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn omega(&self) -> f64 {
        self.log_omega.exp()
    }

    /// Indices of the nonzero coefficients.
    pub fn support(&self) -> Vec<usize> {
        self.beta
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn log_intensity(&self, z: &[f64]) -> f64 {
        self.log_omega + self.beta.iter().zip(z).map(|(b, z)| b * z).sum::<f64>()
    }

    /// `[log ω, β₁, …, β_p]`.
    pub fn to_vector(&self) -> Vec<f64> {
        std::iter::once(self.log_omega)
            .chain(self.beta.iter().copied())
            .collect()
    }

    pub fn from_vector(theta: &[f64]) -> Self {
        Self {
            log_omega: theta[0],
            beta: theta[1..].to_vec(),
        }
    }
}

fn check_dims(model: &LogLinearModel, p: usize) -> Result<()> {
    if model.p() != p {
        return Err(Error::InvalidArgument(format!(
            "model has {} coefficients, covariate field has {p}",
            model.p()
        )));
    }
    Ok(())
}

/// Intensity at an arbitrary location (nearest-cell covariates).
pub fn intensity_at(model: &LogLinearModel, field: &CovariateField, x: f64, y: f64) -> Result<f64> {
    check_dims(model, field.p())?;
    let z = field.lookup(x, y)?;
    Ok(model.log_intensity(&z).exp())
}

/// Intensity at every quadrature node.
pub fn node_intensities(model: &LogLinearModel, quad: &QuadratureScheme) -> Result<Vec<f64>> {
    check_dims(model, quad.p())?;
    let mut eta = vec![model.log_omega; quad.len()];
    for (k, b) in model.beta.iter().enumerate() {
        if *b != 0.0 {
            for (e, z) in eta.iter_mut().zip(quad.covariate(k)) {
                *e += b * z;
            }
        }
    }
    Ok(eta.into_iter().map(f64::exp).collect())
}

/// `Σ_j v_j ρ(u_j)`: the expected number of points in the window.
pub fn expected_count(model: &LogLinearModel, quad: &QuadratureScheme) -> Result<f64> {
    Ok(node_intensities(model, quad)?
        .iter()
        .zip(quad.weights())
        .map(|(r, v)| r * v)
        .sum())
}

/// Shifts `log ω` so that the expected count equals `target_count`.
pub fn calibrate_intercept(
    model: &LogLinearModel,
    quad: &QuadratureScheme,
    target_count: f64,
) -> Result<LogLinearModel> {
    if !(target_count > 0.0 && target_count.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "target count must be positive, got {target_count}"
        )));
    }
    let current = expected_count(model, quad)?;
    LogLinearModel::new(
        model.log_omega + (target_count / current).ln(),
        model.beta.clone(),
    )
}

pub(crate) fn poisson_count<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as usize).unwrap_or(0)
}

fn max_intensity(rho: &[f64]) -> f64 {
    rho.iter().copied().fold(0.0, f64::max)
}

/// Inhomogeneous Poisson process on the quadrature window.
pub fn sample_poisson<R: Rng + ?Sized>(
    model: &LogLinearModel,
    quad: &QuadratureScheme,
    rng: &mut R,
) -> Result<PointPattern> {
    let rho = node_intensities(model, quad)?;
    let rho_max = max_intensity(&rho);
    let window = *quad.window();
    if !rho_max.is_finite() {
        return Err(Error::InvalidArgument("intensity is not finite".into()));
    }
    let n = poisson_count(rng, rho_max * window.area());
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let x = window.x_min + rng.random::<f64>() * window.width();
        let y = window.y_min + rng.random::<f64>() * window.height();
        let node = quad.node_of(x, y).ok_or(Error::OutsideGrid { x, y })?;
        if rng.random::<f64>() * rho_max < rho[node] {
            points.push([x, y]);
        }
    }
    Ok(PointPattern::from_trusted(points, window))
}

/// Thomas process with first-order intensity `ρ(u; β)`.
///
/// Parents are homogeneous Poisson with rate κ on the window dilated by 4σ.
/// Each parent spawns a Poisson number of Gaussian daughters with mean
/// `max ρ / κ`; a daughter at `u` is kept with probability `ρ(u) / max ρ`
/// when it falls inside the window.
pub fn sample_thomas<R: Rng + ?Sized>(
    model: &LogLinearModel,
    params: &ThomasParams,
    quad: &QuadratureScheme,
    rng: &mut R,
) -> Result<PointPattern> {
    let rho = node_intensities(model, quad)?;
    let rho_max = max_intensity(&rho);
    if !rho_max.is_finite() {
        return Err(Error::InvalidArgument("intensity is not finite".into()));
    }
    let window = *quad.window();
    let parent_window = window.dilate(4.0 * params.sigma);
    let n_parents = poisson_count(rng, params.kappa * parent_window.area());
    let mean_daughters = rho_max / params.kappa;
    let mut points = Vec::new();
    for _ in 0..n_parents {
        let px = parent_window.x_min + rng.random::<f64>() * parent_window.width();
        let py = parent_window.y_min + rng.random::<f64>() * parent_window.height();
        for _ in 0..poisson_count(rng, mean_daughters) {
            let dx: f64 = StandardNormal.sample(rng);
            let dy: f64 = StandardNormal.sample(rng);
            let (x, y) = (px + params.sigma * dx, py + params.sigma * dy);
            let u: f64 = rng.random();
            if !window.contains(x, y) {
                continue;
            }
            let node = quad.node_of(x, y).ok_or(Error::OutsideGrid { x, y })?;
            if u * rho_max < rho[node] {
                points.push([x, y]);
            }
        }
    }
    Ok(PointPattern::from_trusted(points, window))
}

/// Pair-correlation function `1 + exp(−r²/(4σ²)) / (4πκσ²)`.
pub fn thomas_pcf(params: &ThomasParams, r: f64) -> f64 {
    let s2 = params.sigma * params.sigma;
    1.0 + (-r * r / (4.0 * s2)).exp() / (4.0 * PI * params.kappa * s2)
}

/// K-function `πr² + (1 − exp(−r²/(4σ²))) / κ`.
pub fn thomas_k(params: &ThomasParams, r: f64) -> f64 {
    let s2 = params.sigma * params.sigma;
    PI * r * r + (-(-r * r / (4.0 * s2)).exp_m1()) / params.kappa
}
