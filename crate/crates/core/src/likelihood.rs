//! Discretized Poisson composite likelihood (Berman–Turner style).
//!
//! With quadrature weights `v_j` and per-node responses `y_j = n_j / v_j`
//! (`n_j` data points in the cell of node `j`) the log-likelihood of a
//! thinned sample with retention probability `p` is
//!
//! ```text
//! log ℓ(θ) = Σ_j v_j (y_j log ρ_j − p ρ_j) = Σ_j n_j η_j − p Σ_j v_j e^{η_j}
//! ```
//!
//! with `η_j = log ω + βᵀ z_j`. The data term only depends on the point
//! count and the covariate sums over the data, which are precomputed.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::geometry::{PointPattern, QuadratureScheme};
use crate::kernel::{self, Request};
use crate::simulate::LogLinearModel;
use crate::{Error, Result};

/// Gradient tolerance of the unpenalized fits.
pub const SCORE_TOL: f64 = 1e-6;
const NEWTON_MAX_ITER: usize = 100;
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct FitData {
    quad: Arc<QuadratureScheme>,
    counts: Vec<f64>,
    n_points: usize,
    data_sums: Vec<f64>,
    p_thin: f64,
}

/// Assigns every point to the node of its containing cell.
pub fn build_fit_data(
    pattern: &PointPattern,
    quad: Arc<QuadratureScheme>,
    p_thin: f64,
) -> Result<FitData> {
    if !(p_thin > 0.0 && p_thin <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "thinning factor must lie in (0, 1], got {p_thin}"
        )));
    }
    let mut counts = vec![0.0; quad.len()];
    let mut data_sums = vec![0.0; quad.p()];
    for &[x, y] in pattern.points() {
        let node = quad.node_of(x, y).ok_or(Error::OutsideGrid { x, y })?;
        counts[node] += 1.0;
        for (s, col) in data_sums.iter_mut().zip(quad.covariates()) {
            *s += col[node];
        }
    }
    Ok(FitData {
        quad,
        counts,
        n_points: pattern.len(),
        data_sums,
        p_thin,
    })
}

impl FitData {
    pub fn quad(&self) -> &QuadratureScheme {
        &self.quad
    }

    pub fn quad_arc(&self) -> &Arc<QuadratureScheme> {
        &self.quad
    }

    pub fn p(&self) -> usize {
        self.quad.p()
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn p_thin(&self) -> f64 {
        self.p_thin
    }

    /// Data points per node.
    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    /// `y_j = n_j / v_j`.
    pub fn responses(&self) -> Vec<f64> {
        self.counts
            .iter()
            .zip(self.quad.weights())
            .map(|(n, v)| n / v)
            .collect()
    }

    /// Covariate sums over the data points.
    pub fn data_sums(&self) -> &[f64] {
        &self.data_sums
    }

    /// Intercept maximizing the likelihood when all coefficients are zero.
    pub(crate) fn null_log_omega(&self) -> f64 {
        (self.n_points as f64 / (self.p_thin * self.quad.total_weight())).ln()
    }

    fn data_term(&self, theta: &[f64]) -> f64 {
        self.n_points as f64 * theta[0]
            + theta[1..]
                .iter()
                .zip(&self.data_sums)
                .map(|(b, s)| b * s)
                .sum::<f64>()
    }

    /// Log-likelihood and the score entries `[log ω, β_cols]` at
    /// `theta = [log ω, β]`.
    pub fn value_and_score(&self, theta: &[f64], all_cols: &[usize]) -> (f64, Vec<f64>) {
        let m = kernel::moments(
            &self.quad,
            &Request {
                log_omega: theta[0],
                beta: &theta[1..],
                first: all_cols,
                second: &[],
            },
        );
        let p = self.p_thin;
        let value = self.data_term(theta) - p * m.total;
        let mut grad = Vec::with_capacity(theta.len());
        grad.push(self.n_points as f64 - p * m.total);
        grad.extend(
            all_cols
                .iter()
                .zip(&m.first)
                .map(|(&k, f)| self.data_sums[k] - p * f),
        );
        (value, grad)
    }

    /// Log-likelihood, score and negative Hessian in the parameters
    /// `[log ω, β_cols]`, with `β` zero outside `cols`.
    pub(crate) fn restricted_derivatives(
        &self,
        theta: &[f64],
        cols: &[usize],
    ) -> (f64, DVector<f64>, DMatrix<f64>) {
        let m = kernel::moments(
            &self.quad,
            &Request {
                log_omega: theta[0],
                beta: &theta[1..],
                first: cols,
                second: cols,
            },
        );
        let p = self.p_thin;
        let d = cols.len() + 1;
        let value = self.data_term(theta) - p * m.total;
        let mut grad = DVector::zeros(d);
        grad[0] = self.n_points as f64 - p * m.total;
        for (i, &k) in cols.iter().enumerate() {
            grad[i + 1] = self.data_sums[k] - p * m.first[i];
        }
        let mut hess = DMatrix::zeros(d, d);
        hess[(0, 0)] = p * m.total;
        for i in 0..cols.len() {
            hess[(0, i + 1)] = p * m.first[i];
            hess[(i + 1, 0)] = p * m.first[i];
            for j in 0..cols.len() {
                hess[(i + 1, j + 1)] = p * m.second[i * cols.len() + j];
            }
        }
        (value, grad, hess)
    }
}

fn check_model(fit: &FitData, model: &LogLinearModel) -> Result<()> {
    if model.p() != fit.p() {
        return Err(Error::InvalidArgument(format!(
            "model has {} coefficients, design has {}",
            model.p(),
            fit.p()
        )));
    }
    Ok(())
}

/// `Σ_j v_j (y_j log ρ_j − p ρ_j)`.
pub fn loglik(fit: &FitData, model: &LogLinearModel) -> Result<f64> {
    check_model(fit, model)?;
    let all: Vec<usize> = (0..fit.p()).collect();
    let (value, _) = fit.value_and_score(&model.to_vector(), &all[..0]);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("log-likelihood is {value}")));
    }
    Ok(value)
}

/// Gradient of [`loglik`] with respect to `[log ω, β₁, …, β_p]`.
pub fn score(fit: &FitData, model: &LogLinearModel) -> Result<Vec<f64>> {
    check_model(fit, model)?;
    let all: Vec<usize> = (0..fit.p()).collect();
    Ok(fit.value_and_score(&model.to_vector(), &all).1)
}

/// Rank of a symmetric positive semidefinite matrix by diagonal-pivoted
/// Cholesky with relative tolerance `tol`.
pub(crate) fn psd_rank(a: &DMatrix<f64>, tol: f64) -> usize {
    let n = a.nrows();
    let mut m = a.clone();
    let scale = (0..n).map(|i| m[(i, i)]).fold(0.0, f64::max);
    if scale <= 0.0 {
        return 0;
    }
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut rank = 0;
    while !remaining.is_empty() {
        let (pos, &piv) = remaining
            .iter()
            .enumerate()
            .max_by(|a, b| m[(*a.1, *a.1)].total_cmp(&m[(*b.1, *b.1)]))
            .unwrap();
        let d = m[(piv, piv)];
        if d <= tol * scale {
            break;
        }
        rank += 1;
        remaining.swap_remove(pos);
        for &i in &remaining {
            for &j in &remaining {
                m[(i, j)] -= m[(i, piv)] * m[(piv, j)] / d;
            }
        }
    }
    rank
}

/// Maximizes the likelihood over `[log ω, β_support]` with all other
/// coefficients fixed at zero, by damped Newton iterations.
pub fn fit_on_support(fit: &FitData, support: &[usize]) -> Result<LogLinearModel> {
    if fit.n_points == 0 {
        return Err(Error::DegenerateData(
            "no data points: the intercept diverges to -inf".into(),
        ));
    }
    if let Some(&bad) = support.iter().find(|&&k| k >= fit.p()) {
        return Err(Error::InvalidArgument(format!("no covariate {bad}")));
    }
    let mut theta = vec![0.0; fit.p() + 1];
    theta[0] = fit.null_log_omega();
    newton(fit, support, theta)
}

/// Like [`fit_on_support`] but Newton starts from `start` restricted to the
/// support, which saves iterations when `start` is close to the optimum.
pub fn fit_on_support_from(
    fit: &FitData,
    support: &[usize],
    start: &LogLinearModel,
) -> Result<LogLinearModel> {
    check_model(fit, start)?;
    if fit.n_points == 0 {
        return Err(Error::DegenerateData(
            "no data points: the intercept diverges to -inf".into(),
        ));
    }
    if let Some(&bad) = support.iter().find(|&&k| k >= fit.p()) {
        return Err(Error::InvalidArgument(format!("no covariate {bad}")));
    }
    let mut theta = vec![0.0; fit.p() + 1];
    theta[0] = start.log_omega;
    for &k in support {
        theta[k + 1] = start.beta[k];
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument("start model must be finite".into()));
    }
    match newton(fit, support, theta) {
        Err(e) if e.is_numerical() => fit_on_support(fit, support),
        res => res,
    }
}

fn newton(fit: &FitData, support: &[usize], mut theta: Vec<f64>) -> Result<LogLinearModel> {
    let (mut value, mut grad, mut hess) = fit.restricted_derivatives(&theta, support);
    let rank = psd_rank(&hess, RANK_TOL);
    if rank < support.len() + 1 {
        return Err(Error::RankDeficient {
            rank,
            columns: support.len() + 1,
        });
    }
    for _ in 0..NEWTON_MAX_ITER {
        if grad.amax() < SCORE_TOL {
            return Ok(LogLinearModel::from_vector(&theta));
        }
        let step = hess
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular("negative Hessian of the log-likelihood".into()))?
            .solve(&grad);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let mut cand = theta.clone();
            cand[0] += t * step[0];
            for (i, &k) in support.iter().enumerate() {
                cand[k + 1] += t * step[i + 1];
            }
            let (v, g, h) = fit.restricted_derivatives(&cand, support);
            if v.is_finite() && v >= value - 1e-12 * value.abs() {
                theta = cand;
                value = v;
                grad = g;
                hess = h;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if grad.amax() < SCORE_TOL {
        return Ok(LogLinearModel::from_vector(&theta));
    }
    Err(Error::NotConverged {
        iterations: NEWTON_MAX_ITER,
        last: Box::new(LogLinearModel::from_vector(&theta)),
    })
}

/// Unpenalized maximizer over all coefficients.
pub fn fit_unpenalized(fit: &FitData) -> Result<LogLinearModel> {
    let all: Vec<usize> = (0..fit.p()).collect();
    fit_on_support(fit, &all)
}
