//! Information criteria for choosing a point on a regularization path.
//!
//! All criteria are `−2 log ℓ + df · m` with `m = log N` (BIC) or
//! `m = log(N/λ)` (ERIC). The composite versions replace the parameter count
//! `k` by `k + tr(S⁻¹T₂)`, where `S` is the sensitivity and `T₂` the
//! second-order part of the variability of the Poisson score under a
//! clustered process.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::likelihood::{self, FitData};
use crate::simulate::{node_intensities, thomas_pcf, LogLinearModel, ThomasParams};
use crate::solver::PathResult;
use crate::stability::SelectionResult;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CriterionKind {
    Bic,
    Eric,
    CBic,
    CEric,
}

impl CriterionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CriterionKind::Bic => "BIC",
            CriterionKind::Eric => "ERIC",
            CriterionKind::CBic => "cBIC",
            CriterionKind::CEric => "cERIC",
        }
    }

    pub fn is_composite(&self) -> bool {
        matches!(self, CriterionKind::CBic | CriterionKind::CEric)
    }

    fn uses_lambda(&self) -> bool {
        matches!(self, CriterionKind::Eric | CriterionKind::CEric)
    }
}

impl std::str::FromStr for CriterionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bic" => Ok(CriterionKind::Bic),
            "eric" => Ok(CriterionKind::Eric),
            "cbic" => Ok(CriterionKind::CBic),
            "ceric" => Ok(CriterionKind::CEric),
            _ => Err(Error::Parse(format!("unknown criterion `{s}`"))),
        }
    }
}

/// Pair-correlation function of the observed process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Pcf {
    /// `g ≡ 1`.
    Poisson,
    Thomas(ThomasParams),
}

impl Pcf {
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            Pcf::Poisson => 1.0,
            Pcf::Thomas(t) => thomas_pcf(t, r),
        }
    }

    /// Distance beyond which `|g − 1|` is below `1e-14 · |g(0) − 1|`.
    fn range(&self) -> f64 {
        match self {
            Pcf::Poisson => 0.0,
            Pcf::Thomas(t) => 2.0 * t.sigma * (14.0 * std::f64::consts::LN_10).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderSpec {
    pub pcf: Pcf,
    /// Cells per side of a coarse block in the `T₂` double sum.
    pub coarsen: usize,
}

impl SecondOrderSpec {
    pub fn new(pcf: Pcf, coarsen: usize) -> Result<Self> {
        if coarsen == 0 {
            return Err(Error::InvalidArgument("coarsening factor must be >= 1".into()));
        }
        Ok(Self { pcf, coarsen })
    }

    /// Twofold coarsening.
    pub fn with_pcf(pcf: Pcf) -> Self {
        Self { pcf, coarsen: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionValue {
    pub kind: CriterionKind,
    pub value: f64,
    pub df: f64,
    pub lambda: f64,
    pub loglik: f64,
    /// Set when `λ ≥ N` makes the ERIC multiplier `log(N/λ)` non-positive.
    pub nonpositive_multiplier: bool,
}

fn design_columns(model: &LogLinearModel) -> Vec<usize> {
    model.support()
}

/// Negative Hessian of the log-likelihood in `[log ω, β_S]`, `S` the
/// support of `model`.
pub fn sensitivity(fit: &FitData, model: &LogLinearModel) -> Result<DMatrix<f64>> {
    if model.p() != fit.p() {
        return Err(Error::InvalidArgument("model does not match the design".into()));
    }
    let cols = design_columns(model);
    let (_, _, s) = fit.restricted_derivatives(&model.to_vector(), &cols);
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sensitivity matrix".into()));
    }
    if s.clone().cholesky().is_none() {
        return Err(Error::Singular("sensitivity matrix is not positive definite".into()));
    }
    Ok(s)
}

/// `Σ_{a,b} x_a x_bᵀ ρ_a ρ_b (g(‖u_a − u_b‖) − 1) V_a V_b` over coarse blocks
/// of `spec.coarsen²` cells, `x = [1, z_S]`.
///
/// Block moments `Σ v ρ x` are placed at the block centers. Pairs beyond the
/// range where `g − 1` is numerically zero are skipped.
pub fn t2_matrix(
    fit: &FitData,
    model: &LogLinearModel,
    spec: &SecondOrderSpec,
) -> Result<DMatrix<f64>> {
    if model.p() != fit.p() {
        return Err(Error::InvalidArgument("model does not match the design".into()));
    }
    if spec.coarsen == 0 {
        return Err(Error::InvalidArgument("coarsening factor must be >= 1".into()));
    }
    let cols = design_columns(model);
    let d = cols.len() + 1;
    let mut t2 = DMatrix::zeros(d, d);
    if matches!(spec.pcf, Pcf::Poisson) {
        return Ok(t2);
    }
    let quad = fit.quad();
    let grid = quad.grid();
    let c = spec.coarsen;
    let (bnx, bny) = (grid.nx.div_ceil(c), grid.ny.div_ceil(c));
    let rho = node_intensities(model, quad)?;
    let p = fit.p_thin();
    let mut m = vec![0.0; bnx * bny * d];
    for (j, &cell) in quad.cells().iter().enumerate() {
        let (ix, iy) = (cell % grid.nx, cell / grid.nx);
        let b = (iy / c) * bnx + ix / c;
        let w = quad.weights()[j] * p * rho[j];
        let row = &mut m[b * d..(b + 1) * d];
        row[0] += w;
        for (slot, &k) in row[1..].iter_mut().zip(&cols) {
            *slot += w * quad.covariate(k)[j];
        }
    }
    let (sx, sy) = (c as f64 * grid.dx, c as f64 * grid.dy);
    let range = spec.pcf.range();
    let ox_max = ((range / sx).ceil() as usize).min(bnx - 1) as isize;
    let oy_max = ((range / sy).ceil() as usize).min(bny - 1) as isize;
    let mut acc = vec![0.0; d * d];
    for oy in -oy_max..=oy_max {
        for ox in -ox_max..=ox_max {
            let r = ((ox as f64 * sx).powi(2) + (oy as f64 * sy).powi(2)).sqrt();
            let weight = spec.pcf.eval(r) - 1.0;
            if weight == 0.0 {
                continue;
            }
            acc.fill(0.0);
            let (bx0, bx1) = ((-ox).max(0) as usize, (bnx as isize - ox.max(0)) as usize);
            let (by0, by1) = ((-oy).max(0) as usize, (bny as isize - oy.max(0)) as usize);
            for by in by0..by1 {
                for bx in bx0..bx1 {
                    let a = by * bnx + bx;
                    let b = (by as isize + oy) as usize * bnx + (bx as isize + ox) as usize;
                    let ma = &m[a * d..(a + 1) * d];
                    if ma[0] == 0.0 {
                        continue;
                    }
                    let mb = &m[b * d..(b + 1) * d];
                    for (k, &x) in ma.iter().enumerate() {
                        let row = &mut acc[k * d..(k + 1) * d];
                        for (o, &y) in row.iter_mut().zip(mb) {
                            *o += x * y;
                        }
                    }
                }
            }
            for k in 0..d {
                for l in 0..d {
                    t2[(k, l)] += weight * acc[k * d + l];
                }
            }
        }
    }
    Ok(t2)
}

/// `k + tr(S⁻¹ T₂)`.
pub fn effective_df(s: &DMatrix<f64>, t2: &DMatrix<f64>, k: usize) -> Result<f64> {
    if s.shape() != t2.shape() || !s.is_square() {
        return Err(Error::InvalidArgument(format!(
            "shape mismatch: S {:?}, T2 {:?}",
            s.shape(),
            t2.shape()
        )));
    }
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("sensitivity matrix is not positive definite".into()))?;
    Ok(k as f64 + chol.solve(t2).trace())
}

/// `−2 log ℓ + df · log N` or, for the ERIC variants, `−2 log ℓ + df · log(N/λ)`.
pub fn criterion_value(
    kind: CriterionKind,
    loglik: f64,
    df: f64,
    n_points: usize,
    lambda: f64,
) -> Result<CriterionValue> {
    if n_points == 0 {
        return Err(Error::DegenerateData("criteria need at least one point".into()));
    }
    if !loglik.is_finite() || !df.is_finite() {
        return Err(Error::NonFinite("criterion inputs".into()));
    }
    let n = n_points as f64;
    let multiplier = if kind.uses_lambda() {
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ERIC needs lambda > 0, got {lambda}"
            )));
        }
        (n / lambda).ln()
    } else {
        n.ln()
    };
    Ok(CriterionValue {
        kind,
        value: -2.0 * loglik + df * multiplier,
        df,
        lambda,
        loglik,
        nonpositive_multiplier: multiplier <= 0.0,
    })
}

pub fn bic(fit: &FitData, model: &LogLinearModel, lambda: f64) -> Result<CriterionValue> {
    evaluate(fit, model, CriterionKind::Bic, lambda, None)
}

pub fn eric(fit: &FitData, model: &LogLinearModel, lambda: f64) -> Result<CriterionValue> {
    evaluate(fit, model, CriterionKind::Eric, lambda, None)
}

pub fn cbic(
    fit: &FitData,
    model: &LogLinearModel,
    lambda: f64,
    spec: &SecondOrderSpec,
) -> Result<CriterionValue> {
    evaluate(fit, model, CriterionKind::CBic, lambda, Some(spec))
}

pub fn ceric(
    fit: &FitData,
    model: &LogLinearModel,
    lambda: f64,
    spec: &SecondOrderSpec,
) -> Result<CriterionValue> {
    evaluate(fit, model, CriterionKind::CEric, lambda, Some(spec))
}

/// Degrees of freedom of `model` (intercept included) under `kind`.
pub fn degrees_of_freedom(
    fit: &FitData,
    model: &LogLinearModel,
    kind: CriterionKind,
    spec: Option<&SecondOrderSpec>,
) -> Result<f64> {
    let k = model.support().len() + 1;
    if !kind.is_composite() {
        return Ok(k as f64);
    }
    let spec = spec.ok_or_else(|| {
        Error::InvalidArgument(format!("{} needs a pair-correlation model", kind.as_str()))
    })?;
    let s = sensitivity(fit, model)?;
    let t2 = t2_matrix(fit, model, spec)?;
    effective_df(&s, &t2, k)
}

/// Criterion of `model`, evaluated as given (callers pass refit models).
pub fn evaluate(
    fit: &FitData,
    model: &LogLinearModel,
    kind: CriterionKind,
    lambda: f64,
    spec: Option<&SecondOrderSpec>,
) -> Result<CriterionValue> {
    let df = degrees_of_freedom(fit, model, kind, spec)?;
    let ll = likelihood::loglik(fit, model)?;
    criterion_value(kind, ll, df, fit.n_points(), lambda)
}

/// Refits every support on the path without penalty and returns the one
/// minimizing the criterion. Ties go to the larger λ.
///
/// Supports whose refit fails are skipped and reported in the notes.
pub fn select_by_criterion(
    path: &PathResult,
    fit: &FitData,
    kind: CriterionKind,
    spec: Option<&SecondOrderSpec>,
) -> Result<SelectionResult> {
    if path.is_empty() {
        return Err(Error::InvalidArgument("empty path".into()));
    }
    let mut cache: HashMap<Vec<usize>, Option<(LogLinearModel, f64, f64)>> = HashMap::new();
    let mut notes = Vec::new();
    let mut values = Vec::with_capacity(path.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, &lambda) in path.lambdas.iter().enumerate() {
        let support = path.support(i);
        let entry = cache.entry(support.clone()).or_insert_with(|| {
            let refit = likelihood::fit_on_support(fit, &support).and_then(|m| {
                let df = degrees_of_freedom(fit, &m, kind, spec)?;
                let ll = likelihood::loglik(fit, &m)?;
                Ok((m, ll, df))
            });
            match refit {
                Ok(v) => Some(v),
                Err(e) => {
                    notes.push(format!("refit on support {support:?} failed: {e}"));
                    None
                }
            }
        });
        let value = match entry {
            Some((_, ll, df)) => Some(criterion_value(kind, *ll, *df, fit.n_points(), lambda)?),
            None => None,
        };
        if let Some(v) = &value {
            if v.nonpositive_multiplier {
                notes.push(format!("lambda {lambda} >= N makes the {} multiplier non-positive", kind.as_str()));
            }
            if best.is_none_or(|(_, b)| v.value < b) {
                best = Some((i, v.value));
            }
        }
        values.push(value);
    }
    let (index, _) = best.ok_or_else(|| {
        Error::DegenerateData("every refit along the path failed".into())
    })?;
    let support = path.support(index);
    let (model, _, _) = cache[&support].clone().expect("selected support has a refit");
    Ok(SelectionResult {
        selector: kind.as_str().to_string(),
        support,
        coefficients: model,
        pfer_bound: None,
        lambda: Some(path.lambdas[index]),
        criterion_values: values,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn df_arithmetic() {
        let s = DMatrix::identity(3, 3);
        let t2 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 0.0]));
        assert_eq!(effective_df(&s, &t2, 5).unwrap(), 8.0);
        assert_eq!(effective_df(&s, &DMatrix::zeros(3, 3), 4).unwrap(), 4.0);
        assert!(effective_df(&DMatrix::zeros(3, 3), &t2, 1).is_err());
    }

    #[test]
    fn eric_at_unit_lambda_is_bic() {
        let b = criterion_value(CriterionKind::Bic, -120.0, 3.0, 50, 0.3).unwrap();
        let e = criterion_value(CriterionKind::Eric, -120.0, 3.0, 50, 1.0).unwrap();
        assert_eq!(b.value, e.value);
        let big = criterion_value(CriterionKind::Eric, -120.0, 3.0, 50, 80.0).unwrap();
        assert!(big.nonpositive_multiplier);
        assert!(criterion_value(CriterionKind::Eric, -1.0, 1.0, 5, 0.0).is_err());
        assert!(criterion_value(CriterionKind::Bic, -1.0, 1.0, 0, 1.0).is_err());
    }

    #[test]
    fn parse_kinds() {
        assert_eq!("cERIC".parse::<CriterionKind>().unwrap(), CriterionKind::CEric);
        assert!("aic".parse::<CriterionKind>().is_err());
        assert!(SecondOrderSpec::new(Pcf::Poisson, 0).is_err());
    }
}
