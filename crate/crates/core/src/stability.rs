//! Stability selection over p-thinned subsamples.
//!
//! Each subsample keeps every point independently with probability `p`
//! and is fitted with the thinned likelihood, its own adaptive weights and a
//! warm-started path. The λ range is calibrated on the first pilot
//! subsamples so that the expected size of the union of supports matches a
//! PFER target; covariates whose inclusion frequency reaches `π_th` at some
//! λ of the range are selected and refitted on the full data.

use std::io::Write;
use std::sync::Arc;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::CriterionValue;
use crate::geometry::{PointPattern, QuadratureScheme};
use crate::likelihood::{build_fit_data, fit_on_support, fit_on_support_from, fit_unpenalized, FitData};
use crate::noise::p_thin;
use crate::rng;
use crate::simulate::LogLinearModel;
use crate::solver::{adaptive_weights, solve_path_prefix, PathConfig, PenaltyKind, PenaltySpec, WarmSolver};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityConfig {
    /// Number of subsamples `K`.
    pub k: usize,
    pub p_thin: f64,
    pub pi_th: f64,
    pub pfer_target: f64,
    /// Subsamples used to calibrate the λ range (the first ones of the `K`).
    pub pilots: usize,
    pub seed: u64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            k: 50,
            p_thin: 0.5,
            pi_th: 0.9,
            pfer_target: 1.0,
            pilots: 10,
            seed: 0,
        }
    }
}

impl StabilityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidArgument(format!("K must be >= 2, got {}", self.k)));
        }
        if !(self.p_thin > 0.0 && self.p_thin < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "thinning probability must lie in (0, 1), got {}",
                self.p_thin
            )));
        }
        if !(self.pi_th > 0.5 && self.pi_th <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold must lie in (0.5, 1], got {}",
                self.pi_th
            )));
        }
        if !(self.pfer_target > 0.0 && self.pfer_target.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "PFER target must be positive, got {}",
                self.pfer_target
            )));
        }
        if self.pilots == 0 || self.pilots > self.k {
            return Err(Error::InvalidArgument(format!(
                "pilot count must lie in [1, K], got {}",
                self.pilots
            )));
        }
        Ok(())
    }

    /// `q` with `q² / (p (2π_th − 1))` equal to the PFER target.
    pub fn q_target(&self, p: usize) -> f64 {
        (self.pfer_target * p as f64 * (2.0 * self.pi_th - 1.0)).sqrt()
    }
}

/// `q_Λ² / (p (2π_th − 1))`.
pub fn pfer_bound(pi_th: f64, q_lambda: f64, p: usize) -> f64 {
    let r = q_lambda / (p as f64 * (2.0 * pi_th - 1.0)).sqrt();
    r * r
}

/// Calibrated λ range as indices into the base grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRange {
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub i_max: usize,
    pub i_min: usize,
    pub q_target: f64,
    /// Pilot mean of `|∪_{i_max ≤ i' ≤ i} S^{λ_i'}|` for every grid index
    /// solved during calibration.
    pub q_hat: Vec<f64>,
    /// Even the top of the grid selects something in some pilot.
    pub grid_top_nonempty: bool,
    /// The target was never exceeded on the grid; `λ_min` is the grid minimum.
    pub target_unreachable: bool,
}

impl LambdaRange {
    /// Smallest index `i ≥ i_max` with `q̂ ≤ q_target` up to it, among the
    /// solved indices.
    fn min_index(q_hat: &[f64], i_max: usize, q_target: f64) -> usize {
        let mut i_min = i_max;
        for (i, &q) in q_hat.iter().enumerate().skip(i_max) {
            if q > q_target {
                break;
            }
            i_min = i;
        }
        i_min
    }
}

/// Inclusion frequencies over the calibrated range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityPath {
    /// λ values of the range, decreasing.
    pub lambdas: Vec<f64>,
    /// `counts[i][j]`: subsamples with covariate `j` in the support at `lambdas[i]`.
    pub counts: Vec<Vec<u32>>,
    /// Subsample estimate of the expected size of the union of supports.
    pub q_lambda: f64,
    pub range: LambdaRange,
    pub config: StabilityConfig,
    pub penalty: PenaltyKind,
    pub empty_subsamples: usize,
    pub notes: Vec<String>,
    /// Supports of every subsample over the whole solved prefix of the
    /// base grid.
    #[serde(skip)]
    supports: Vec<Vec<Vec<usize>>>,
}

impl StabilityPath {
    pub fn p(&self) -> usize {
        self.counts.first().map_or(0, |c| c.len())
    }

    /// `Π_j^λ` for every λ in the range.
    pub fn pi(&self) -> Vec<Vec<f64>> {
        let k = self.config.k as f64;
        self.counts
            .iter()
            .map(|row| row.iter().map(|&c| c as f64 / k).collect())
            .collect()
    }

    /// `max_λ Π_j^λ`.
    pub fn max_pi(&self) -> Vec<f64> {
        let k = self.config.k as f64;
        (0..self.p())
            .map(|j| self.counts.iter().map(|row| row[j]).max().unwrap_or(0) as f64 / k)
            .collect()
    }

    /// Covariates with `max_λ Π_j^λ ≥ π_th`.
    pub fn stable_support(&self) -> Vec<usize> {
        let need = self.config.pi_th * self.config.k as f64;
        (0..self.p())
            .filter(|&j| {
                self.counts.iter().any(|row| row[j] as f64 >= need - 1e-9)
            })
            .collect()
    }

    pub fn pfer_bound(&self) -> f64 {
        pfer_bound(self.config.pi_th, self.q_lambda, self.p())
    }

    /// The same subsamples thresholded on the range a smaller PFER target
    /// would calibrate. Targets above the calibrated one are clamped to it.
    pub fn restrict(&self, pfer_target: f64) -> Result<StabilityPath> {
        let mut config = self.config.clone();
        config.pfer_target = pfer_target.min(self.config.pfer_target);
        config.validate()?;
        let q_target = config.q_target(self.p());
        let i_min = LambdaRange::min_index(&self.range.q_hat, self.range.i_max, q_target)
            .min(self.range.i_min);
        let keep = i_min - self.range.i_max + 1;
        let mut range = self.range.clone();
        range.i_min = i_min;
        range.lambda_min = self.lambdas[keep - 1];
        range.q_target = q_target;
        Ok(StabilityPath {
            lambdas: self.lambdas[..keep].to_vec(),
            counts: self.counts[..keep].to_vec(),
            q_lambda: union_size(&self.supports, range.i_max, i_min),
            range,
            config,
            penalty: self.penalty,
            empty_subsamples: self.empty_subsamples,
            notes: self.notes.clone(),
            supports: self.supports.clone(),
        })
    }

    /// Writes `lambda,covariate,pi` rows.
    pub fn write_csv<W: Write>(&self, out: W, names: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["lambda", "covariate", "pi"])?;
        let k = self.config.k as f64;
        for (lambda, row) in self.lambdas.iter().zip(&self.counts) {
            for (j, &c) in row.iter().enumerate() {
                let name = names.get(j).cloned().unwrap_or_else(|| j.to_string());
                w.write_record([lambda.to_string(), name, (c as f64 / k).to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn union_size(supports: &[Vec<Vec<usize>>], from: usize, to: usize) -> f64 {
    if supports.is_empty() {
        return 0.0;
    }
    let total: usize = supports
        .iter()
        .map(|path| {
            let mut u: Vec<usize> = path
                .iter()
                .take(to + 1)
                .skip(from)
                .flatten()
                .copied()
                .collect();
            u.sort_unstable();
            u.dedup();
            u.len()
        })
        .sum();
    total as f64 / supports.len() as f64
}

/// Outcome of a selection procedure with its refit on the full data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selector: String,
    pub support: Vec<usize>,
    /// Unpenalized refit, nonzero exactly on `support`.
    pub coefficients: LogLinearModel,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pfer_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub criterion_values: Vec<Option<CriterionValue>>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

/// One thinned subsample ready for path fitting.
struct Subsample {
    fit: Option<FitData>,
    weights: Vec<f64>,
    note: Option<String>,
}

fn prepare(
    pattern: &PointPattern,
    quad: &Arc<QuadratureScheme>,
    config: &StabilityConfig,
    index: usize,
    start: Option<&LogLinearModel>,
) -> Result<Subsample> {
    let seed = rng::derive_seed(config.seed, &[0x5ab5]);
    let thinned = p_thin(pattern, config.p_thin, &mut rng::stream(seed, index as u64))?;
    if thinned.is_empty() {
        return Ok(Subsample {
            fit: None,
            weights: vec![],
            note: Some(format!("subsample {index} is empty")),
        });
    }
    let fit = build_fit_data(&thinned, quad.clone(), config.p_thin)?;
    let pilot = match start {
        Some(m) => fit_on_support_from(&fit, &(0..fit.p()).collect::<Vec<_>>(), m),
        None => fit_unpenalized(&fit),
    };
    match pilot {
        Ok(m) => Ok(Subsample {
            weights: adaptive_weights(&m),
            fit: Some(fit),
            note: None,
        }),
        Err(e) if e.is_numerical() => Ok(Subsample {
            fit: None,
            weights: vec![],
            note: Some(format!("subsample {index}: pilot fit failed: {e}")),
        }),
        Err(e) => Err(e),
    }
}

/// Runs the pilots in lockstep down the grid until the mean union size
/// exceeds the target. Returns the range and the pilot supports.
fn calibrate(
    subs: &[Subsample],
    kind: PenaltyKind,
    path_config: &PathConfig,
    q_target: f64,
) -> Result<(LambdaRange, Vec<Vec<Vec<usize>>>)> {
    let grid = &path_config.lambda_grid;
    let n = subs.len();
    let mut current: Vec<Option<WarmSolver>> = subs
        .iter()
        .map(|s| s.fit.as_ref().map(WarmSolver::new))
        .collect();
    let mut supports: Vec<Vec<Vec<usize>>> = vec![Vec::new(); n];
    let mut unions: Vec<Vec<bool>> = vec![Vec::new(); n];
    let mut q_hat = Vec::with_capacity(grid.len());
    let mut i_max: Option<usize> = None;
    let mut exceeded = false;
    for (i, &lambda) in grid.iter().enumerate() {
        let step: Vec<Result<Vec<usize>>> = subs
            .par_iter()
            .zip(current.par_iter_mut())
            .map(|(s, cur)| {
                let (Some(fit), Some(solver)) = (s.fit.as_ref(), cur.as_mut()) else {
                    return Ok(Vec::new());
                };
                let penalty = PenaltySpec::new(kind, lambda, s.weights.clone())?;
                solver.step(fit, &penalty, path_config).map_err(|e| Error::Path {
                    index: i,
                    source: Box::new(e),
                })?;
                Ok(solver.model().support())
            })
            .collect();
        for (j, res) in step.into_iter().enumerate() {
            let support = match res {
                Ok(s) => s,
                Err(e) if e.is_numerical() => {
                    warn!("pilot {j} failed at lambda index {i}: {e}");
                    current[j] = None;
                    Vec::new()
                }
                Err(e) => return Err(e),
            };
            supports[j].push(support);
        }
        let all_empty = supports.iter().all(|s| s[i].is_empty());
        if i_max.is_none() && (!all_empty || i + 1 == grid.len()) {
            // Last index of the leading all-empty run, or 0 if the grid top
            // already selects.
            i_max = Some(if all_empty { i } else { i.saturating_sub(1) });
        }
        let start = i_max.unwrap_or(i);
        for (u, s) in unions.iter_mut().zip(&supports) {
            if u.is_empty() {
                u.resize(subs.first().and_then(|s| s.fit.as_ref()).map_or(0, |f| f.p()), false);
            }
            if i >= start {
                for &c in &s[i] {
                    if c < u.len() {
                        u[c] = true;
                    }
                }
            }
        }
        let q = unions
            .iter()
            .map(|u| u.iter().filter(|b| **b).count())
            .sum::<usize>() as f64
            / n.max(1) as f64;
        q_hat.push(q);
        if i_max.is_some() && q > q_target {
            exceeded = true;
            break;
        }
    }
    let i_max = i_max.unwrap_or(0);
    // Indices before the union starts report zero.
    for q in q_hat.iter_mut().take(i_max) {
        *q = 0.0;
    }
    let grid_top_nonempty = supports.iter().any(|s| !s[0].is_empty());
    let i_min = LambdaRange::min_index(&q_hat, i_max, q_target);
    if !exceeded {
        warn!("PFER target q = {q_target:.3} not reached on the grid; using its minimum");
    }
    Ok((
        LambdaRange {
            lambda_max: grid[i_max],
            lambda_min: grid[i_min],
            i_max,
            i_min,
            q_target,
            q_hat,
            grid_top_nonempty,
            target_unreachable: !exceeded,
        },
        supports,
    ))
}

/// Inclusion frequencies of the `K` subsamples over the calibrated range of
/// `path_config.lambda_grid`.
pub fn stability_path(
    pattern: &PointPattern,
    quad: &Arc<QuadratureScheme>,
    kind: PenaltyKind,
    config: &StabilityConfig,
    path_config: &PathConfig,
) -> Result<StabilityPath> {
    config.validate()?;
    path_config.validate()?;
    if pattern.is_empty() {
        return Err(Error::DegenerateData("stability selection needs a nonempty pattern".into()));
    }
    let p = quad.p();
    // The full-data fit is a close starting point for every subsample fit.
    let start = build_fit_data(pattern, quad.clone(), 1.0)
        .and_then(|f| fit_unpenalized(&f))
        .ok();
    let subs: Vec<Subsample> = (0..config.k)
        .into_par_iter()
        .map(|i| prepare(pattern, quad, config, i, start.as_ref()))
        .collect::<Result<_>>()?;
    let mut notes: Vec<String> = subs.iter().filter_map(|s| s.note.clone()).collect();
    let empty_subsamples = subs.iter().filter(|s| s.fit.is_none()).count();

    let q_target = config.q_target(p);
    let (range, pilot_supports) = calibrate(&subs[..config.pilots], kind, path_config, q_target)?;
    if range.target_unreachable {
        notes.push(format!(
            "q target {q_target:.4} not reached; lambda_min is the grid minimum"
        ));
    }
    if range.grid_top_nonempty {
        notes.push("the largest lambda of the grid already selects covariates".into());
    }
    debug!(
        "calibrated range [{}, {}] (indices {}..={})",
        range.lambda_min, range.lambda_max, range.i_max, range.i_min
    );

    let len = range.i_min + 1;
    let rest: Vec<(Vec<Vec<usize>>, Option<String>)> = subs[config.pilots..]
        .par_iter()
        .enumerate()
        .map(|(offset, s)| {
            let Some(fit) = s.fit.as_ref() else {
                return (vec![Vec::new(); len], None);
            };
            match solve_path_prefix(fit, kind, &s.weights, path_config, len) {
                Ok(path) => (path.supports(), None),
                Err(e) => (
                    vec![Vec::new(); len],
                    Some(format!("subsample {}: {e}", config.pilots + offset)),
                ),
            }
        })
        .collect();
    let mut supports: Vec<Vec<Vec<usize>>> = pilot_supports
        .into_iter()
        .map(|mut s| {
            s.truncate(len);
            s
        })
        .collect();
    for (s, note) in rest {
        supports.push(s);
        notes.extend(note);
    }

    let mut counts = vec![vec![0u32; p]; len - range.i_max];
    for path in &supports {
        for (row, support) in counts.iter_mut().zip(&path[range.i_max..len]) {
            for &j in support {
                row[j] += 1;
            }
        }
    }
    Ok(StabilityPath {
        lambdas: path_config.lambda_grid[range.i_max..len].to_vec(),
        counts,
        q_lambda: union_size(&supports, range.i_max, range.i_min),
        range,
        config: config.clone(),
        penalty: kind,
        empty_subsamples,
        notes,
        supports,
    })
}

/// Selects `{ j : max_λ Π_j^λ ≥ π_th }` and refits it on `full`.
pub fn select_stable(path: &StabilityPath, full: &FitData) -> Result<SelectionResult> {
    let support = path.stable_support();
    let coefficients = fit_on_support(full, &support)?;
    Ok(SelectionResult {
        selector: "stability".into(),
        support,
        coefficients,
        pfer_bound: Some(path.pfer_bound()),
        lambda: None,
        criterion_values: Vec::new(),
        notes: path.notes.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_arithmetic() {
        assert_eq!(pfer_bound(0.9, 12f64.sqrt(), 15), 1.0);
        assert_eq!(pfer_bound(0.9, 0.0, 15), 0.0);
        let a = pfer_bound(0.8, 1.5, 10);
        assert!((pfer_bound(0.8, 3.0, 10) - 4.0 * a).abs() < 1e-14);
    }

    #[test]
    fn q_targets() {
        let c = StabilityConfig::default();
        assert!((c.q_target(15) - 12f64.sqrt()).abs() < 1e-15);
        let c3 = StabilityConfig {
            pfer_target: 3.0,
            ..c
        };
        assert!((c3.q_target(15) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let ok = StabilityConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            StabilityConfig { k: 1, pilots: 1, ..ok.clone() },
            StabilityConfig { p_thin: 1.0, ..ok.clone() },
            StabilityConfig { pi_th: 0.5, ..ok.clone() },
            StabilityConfig { pfer_target: 0.0, ..ok.clone() },
            StabilityConfig { pilots: 51, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn min_index_stops_at_first_excess() {
        let q = [0.0, 0.0, 1.0, 2.5, 3.4, 3.9, 3.0];
        assert_eq!(LambdaRange::min_index(&q, 1, 3.464), 4);
        assert_eq!(LambdaRange::min_index(&q, 1, 0.5), 1);
        assert_eq!(LambdaRange::min_index(&q, 1, 10.0), 6);
    }
}
