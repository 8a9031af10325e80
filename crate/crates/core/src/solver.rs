//! Proximal gradient descent for adaptive L0/L1-penalized intensity models.
//!
//! The minimized objective is `−log ℓ(θ) + λ Σ_i w_i h(β_i)` with `h` the
//! indicator of a nonzero (L0) or the absolute value (L1). The intercept
//! takes plain gradient steps and is never penalized.

use serde::{Deserialize, Serialize};

use crate::likelihood::FitData;
use crate::simulate::LogLinearModel;
use crate::{Error, Result};

/// Weight standing in for `1/|β̂_i|` when the pilot coefficient is exactly 0.
pub const EXCLUDED_WEIGHT: f64 = 1e12;
const BB_MIN: f64 = 1e-8;
const BB_MAX: f64 = 1e2;
const STALL_EPS: f64 = 1e-10;
const FIXED_STEP_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PenaltyKind {
    L0,
    L1,
}

impl PenaltyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PenaltyKind::L0 => "L0",
            PenaltyKind::L1 => "L1",
        }
    }

    /// Penalty contribution of one coefficient with unit weight.
    fn h(&self, b: f64) -> f64 {
        match self {
            PenaltyKind::L0 => (b != 0.0) as u8 as f64,
            PenaltyKind::L1 => b.abs(),
        }
    }
}

impl std::str::FromStr for PenaltyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l0" => Ok(PenaltyKind::L0),
            "l1" => Ok(PenaltyKind::L1),
            _ => Err(Error::Parse(format!("unknown penalty `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub lambda: f64,
    pub weights: Vec<f64>,
}

impl PenaltySpec {
    pub fn new(kind: PenaltyKind, lambda: f64, weights: Vec<f64>) -> Result<Self> {
        if !(lambda >= 0.0) || lambda.is_infinite() {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || w.is_infinite()) {
            return Err(Error::InvalidArgument("penalty weights must be finite and >= 0".into()));
        }
        Ok(Self {
            kind,
            lambda,
            weights,
        })
    }

    /// `λ Σ w_i h(β_i)`.
    pub fn value(&self, beta: &[f64]) -> f64 {
        self.lambda
            * beta
                .iter()
                .zip(&self.weights)
                .map(|(b, w)| w * self.kind.h(*b))
                .sum::<f64>()
    }
}

/// Adaptive weights `1/|β̂_i|` from an unpenalized fit.
pub fn adaptive_weights(unpenalized: &LogLinearModel) -> Vec<f64> {
    unpenalized
        .beta
        .iter()
        .map(|b| {
            if *b == 0.0 {
                EXCLUDED_WEIGHT
            } else {
                (1.0 / b.abs()).min(EXCLUDED_WEIGHT)
            }
        })
        .collect()
}

/// Hard thresholding: keeps `x_i` iff `x_i² > ξ_i²`.
pub fn prox_hard(x: &[f64], thresholds: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(thresholds)
        .map(|(&v, &xi)| if v * v > xi * xi { v } else { 0.0 })
        .collect()
}

/// Soft thresholding `sign(x_i) max(|x_i| − s_i, 0)`.
pub fn prox_soft(x: &[f64], shifts: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(shifts)
        .map(|(&v, &s)| {
            if v > s {
                v - s
            } else if v < -s {
                v + s
            } else {
                0.0
            }
        })
        .collect()
}

/// Barzilai–Borwein step `|Δθᵀ Δg| / ‖Δg‖²`, clamped to `[1e-8, 1e2]`.
/// Returns `previous` when `Δg` vanishes.
pub fn bb_step(d_theta: &[f64], d_grad: &[f64], previous: f64) -> f64 {
    let gg: f64 = d_grad.iter().map(|g| g * g).sum();
    if !(gg > 0.0) || !gg.is_finite() {
        return previous;
    }
    let tg: f64 = d_theta.iter().zip(d_grad).map(|(a, b)| a * b).sum();
    (tg.abs() / gg).clamp(BB_MIN, BB_MAX)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepPolicy {
    /// Barzilai–Borwein steps after a first step of the given size.
    BarzilaiBorwein { initial: f64 },
    Fixed(f64),
}

impl StepPolicy {
    /// BB warm-up at 1e-4 for L1, fixed 1e-3 for L0.
    pub fn default_for(kind: PenaltyKind) -> Self {
        match kind {
            PenaltyKind::L1 => StepPolicy::BarzilaiBorwein { initial: 1e-4 },
            PenaltyKind::L0 => StepPolicy::Fixed(1e-3),
        }
    }

    fn initial(&self) -> f64 {
        match *self {
            StepPolicy::BarzilaiBorwein { initial } => initial,
            StepPolicy::Fixed(g) => g,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathConfig {
    /// Strictly decreasing penalty weights.
    pub lambda_grid: Vec<f64>,
    pub step: StepPolicy,
    pub max_iter: usize,
    /// Relative change of `β` between iterations that counts as converged.
    pub tol: f64,
    /// Iterations without objective improvement that count as converged.
    pub stall_window: usize,
}

/// `count` log-equidistant values from `max` down to `min`.
pub fn log_grid(max: f64, min: f64, count: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max > min && count >= 2) {
        return Err(Error::InvalidArgument(format!(
            "lambda grid needs 0 < min < max and count >= 2, got ({min}, {max}, {count})"
        )));
    }
    let (a, b) = (max.ln(), min.ln());
    Ok((0..count)
        .map(|i| {
            if i == 0 {
                max
            } else if i == count - 1 {
                min
            } else {
                (a + (b - a) * i as f64 / (count - 1) as f64).exp()
            }
        })
        .collect())
}

impl PathConfig {
    pub fn new(kind: PenaltyKind, lambda_grid: Vec<f64>) -> Result<Self> {
        let cfg = Self {
            lambda_grid,
            step: StepPolicy::default_for(kind),
            max_iter: 10_000,
            tol: 1e-4,
            stall_window: 1000,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() {
            return Err(Error::InvalidArgument("empty lambda grid".into()));
        }
        if self.lambda_grid.iter().any(|l| !(*l >= 0.0) || l.is_infinite()) {
            return Err(Error::InvalidArgument("lambda values must be finite and >= 0".into()));
        }
        if self.lambda_grid.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument("lambda grid must be strictly decreasing".into()));
        }
        if !(self.step.initial() > 0.0) {
            return Err(Error::InvalidArgument("step size must be positive".into()));
        }
        if self.max_iter == 0 || !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("max_iter and tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    RelativeChange,
    Stalled,
    MaxIter,
}

/// Convergence record of one penalized solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub lambda: f64,
    pub iterations: usize,
    /// Penalized objective `−log ℓ + penalty` at the returned point.
    pub objective: f64,
    pub converged: bool,
    pub stop: StopReason,
}

#[derive(Debug, Clone)]
pub struct PgdOutcome {
    pub model: LogLinearModel,
    pub diagnostics: SolveDiagnostics,
}

fn apply_prox(kind: PenaltyKind, gamma: f64, lambda: f64, weights: &[f64], coef: &mut [f64]) {
    for (b, w) in coef.iter_mut().zip(weights) {
        let t = gamma * lambda * w;
        match kind {
            PenaltyKind::L0 => {
                if *b * *b <= 2.0 * t {
                    *b = 0.0;
                }
            }
            PenaltyKind::L1 => {
                *b = if *b > t {
                    *b - t
                } else if *b < -t {
                    *b + t
                } else {
                    0.0
                };
            }
        }
    }
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Proximal gradient descent from `init`.
///
/// Iterates `θ ← prox(θ + γ ∇log ℓ(θ))` with the prox acting on the
/// coefficients only. Stops on a relative change of `β` below `config.tol`,
/// on `config.stall_window` iterations without improvement of the penalized
/// objective, or after `config.max_iter` iterations.
pub fn pgd_solve(
    fit: &FitData,
    penalty: &PenaltySpec,
    init: &LogLinearModel,
    config: &PathConfig,
) -> Result<PgdOutcome> {
    pgd_core(fit, penalty, init, None, config).map(|(out, _)| out)
}

type Evaluation = (f64, Vec<f64>);

/// PGD that may reuse the log-likelihood and score already known at `init`,
/// and hands back those of the returned iterate.
fn pgd_core(
    fit: &FitData,
    penalty: &PenaltySpec,
    init: &LogLinearModel,
    known: Option<Evaluation>,
    config: &PathConfig,
) -> Result<(PgdOutcome, Evaluation)> {
    let p = fit.p();
    if init.p() != p || penalty.weights.len() != p {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: design {p}, model {}, weights {}",
            init.p(),
            penalty.weights.len()
        )));
    }
    if !init.log_omega.is_finite() || init.beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidArgument("initial model must be finite".into()));
    }
    let all: Vec<usize> = (0..p).collect();
    let objective = |value: f64, theta: &[f64]| -value + penalty.value(&theta[1..]);

    let mut theta = init.to_vector();
    let (mut value, mut score) = known.unwrap_or_else(|| fit.value_and_score(&theta, &all));
    if !value.is_finite() {
        return Err(Error::Diverged { iterations: 0 });
    }
    let mut obj = objective(value, &theta);
    let mut best = obj;
    let mut best_iter = 0;
    let mut gamma = config.step.initial();
    let adaptive = matches!(config.step, StepPolicy::BarzilaiBorwein { .. });
    let mut previous: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut stop = StopReason::MaxIter;
    let mut iterations = 0;

    while iterations < config.max_iter {
        iterations += 1;
        if adaptive {
            if let Some((prev_theta, prev_score)) = &previous {
                let d_theta: Vec<f64> = theta.iter().zip(prev_theta).map(|(a, b)| a - b).collect();
                // Δ of the descent gradient −score.
                let d_grad: Vec<f64> = prev_score.iter().zip(&score).map(|(a, b)| a - b).collect();
                gamma = bb_step(&d_theta, &d_grad, gamma);
            }
        }
        let mut tries = 0;
        let (cand, cand_value, cand_score) = loop {
            let mut cand: Vec<f64> = theta.iter().zip(&score).map(|(t, s)| t + gamma * s).collect();
            apply_prox(penalty.kind, gamma, penalty.lambda, &penalty.weights, &mut cand[1..]);
            let (v, s) = fit.value_and_score(&cand, &all);
            // A fixed step larger than the local curvature allows is shrunk
            // for the rest of the solve.
            let accepted = if adaptive {
                v.is_finite()
            } else {
                v.is_finite() && objective(v, &cand) <= obj + FIXED_STEP_SLACK * obj.abs().max(1.0)
            };
            if accepted {
                break (cand, v, s);
            }
            tries += 1;
            if tries > 60 {
                return Err(Error::Diverged { iterations });
            }
            gamma *= 0.5;
        };
        // Relative change of β; of the whole θ while the model is empty.
        let beta_norm = norm(cand[1..].iter().copied());
        let (change, scale) = if beta_norm > 0.0 {
            (norm(cand[1..].iter().zip(&theta[1..]).map(|(a, b)| a - b)), beta_norm)
        } else {
            (
                norm(cand.iter().zip(&theta).map(|(a, b)| a - b)),
                norm(cand.iter().copied()).max(1e-12),
            )
        };
        previous = Some((std::mem::replace(&mut theta, cand), std::mem::replace(&mut score, cand_score)));
        value = cand_value;
        obj = objective(value, &theta);
        if obj < best - STALL_EPS {
            best = obj;
            best_iter = iterations;
        }
        if change / scale < config.tol {
            stop = StopReason::RelativeChange;
            break;
        }
        if iterations - best_iter >= config.stall_window {
            stop = StopReason::Stalled;
            break;
        }
    }
    let outcome = PgdOutcome {
        model: LogLinearModel::from_vector(&theta),
        diagnostics: SolveDiagnostics {
            lambda: penalty.lambda,
            iterations,
            objective: obj,
            converged: stop != StopReason::MaxIter,
            stop,
        },
    };
    Ok((outcome, (value, score)))
}

/// Warm-started solve that carries the last evaluation between calls.
#[derive(Debug, Clone)]
pub(crate) struct WarmSolver {
    model: LogLinearModel,
    known: Option<Evaluation>,
}

impl WarmSolver {
    /// Starts from the intercept-only maximizer.
    pub(crate) fn new(fit: &FitData) -> Self {
        WarmSolver {
            model: LogLinearModel::intercept_only(fit.p(), fit.null_log_omega()),
            known: None,
        }
    }

    pub(crate) fn model(&self) -> &LogLinearModel {
        &self.model
    }

    pub(crate) fn step(
        &mut self,
        fit: &FitData,
        penalty: &PenaltySpec,
        config: &PathConfig,
    ) -> Result<SolveDiagnostics> {
        let (out, eval) = pgd_core(fit, penalty, &self.model, self.known.take(), config)?;
        self.model = out.model;
        self.known = Some(eval);
        Ok(out.diagnostics)
    }
}

/// Solutions along a decreasing λ grid.
#[derive(Debug, Clone)]
pub struct PathResult {
    pub lambdas: Vec<f64>,
    pub models: Vec<LogLinearModel>,
    pub diagnostics: Vec<SolveDiagnostics>,
}

impl PathResult {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn support(&self, i: usize) -> Vec<usize> {
        self.models[i].support()
    }

    pub fn supports(&self) -> Vec<Vec<usize>> {
        self.models.iter().map(|m| m.support()).collect()
    }
}

/// Warm-started path over the first `len` values of the grid.
///
/// The first solve starts from the intercept-only maximizer with all
/// coefficients at zero.
pub fn solve_path_prefix(
    fit: &FitData,
    kind: PenaltyKind,
    weights: &[f64],
    config: &PathConfig,
    len: usize,
) -> Result<PathResult> {
    config.validate()?;
    if fit.n_points() == 0 {
        return Err(Error::DegenerateData("cannot fit a path to an empty pattern".into()));
    }
    let len = len.min(config.lambda_grid.len());
    let mut solver = WarmSolver::new(fit);
    let mut out = PathResult {
        lambdas: Vec::with_capacity(len),
        models: Vec::with_capacity(len),
        diagnostics: Vec::with_capacity(len),
    };
    for (index, &lambda) in config.lambda_grid[..len].iter().enumerate() {
        let penalty = PenaltySpec::new(kind, lambda, weights.to_vec())?;
        let diagnostics = solver.step(fit, &penalty, config).map_err(|e| Error::Path {
            index,
            source: Box::new(e),
        })?;
        out.lambdas.push(lambda);
        out.models.push(solver.model().clone());
        out.diagnostics.push(diagnostics);
    }
    Ok(out)
}

/// Warm-started path over the whole grid.
pub fn solve_path(
    fit: &FitData,
    kind: PenaltyKind,
    weights: &[f64],
    config: &PathConfig,
) -> Result<PathResult> {
    solve_path_prefix(fit, kind, weights, config, config.lambda_grid.len())
}
