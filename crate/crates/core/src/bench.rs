//! Monte Carlo scenario runner.
//!
//! A scenario fixes the process (Poisson or Thomas) and the noise
//! (displacement or hardcore thinning). For every expected count `n` and
//! noise magnitude `c` of the grid, each repetition simulates a pattern,
//! corrupts it, runs every requested penalty/selector pair and compares the
//! selected support with the true one.
//!
//! Seeds are derived from the master seed and the `(n, rep)` indices for the
//! clean pattern and from `(n, c, rep)` for the noise, so cells share their
//! clean patterns across `c`. Output does not depend on thread scheduling.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{select_by_criterion, CriterionKind, Pcf, SecondOrderSpec};
use crate::geometry::{make_quadrature, synth_covariates, CovariateField, Grid, PointPattern, QuadratureScheme, Window};
use crate::likelihood::{build_fit_data, fit_unpenalized};
use crate::metrics::{MetricsReport, SelectionOutcome};
use crate::noise::{CutoffRadius, NoiseKind, NoiseSpec};
use crate::rng;
use crate::secondorder::two_step_fit;
use crate::simulate::{calibrate_intercept, sample_poisson, sample_thomas, LogLinearModel, ThomasParams};
use crate::solver::{adaptive_weights, log_grid, solve_path, PathConfig, PenaltyKind};
use crate::stability::{select_stable, stability_path, StabilityConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    /// Poisson, localization noise.
    P1,
    /// Poisson, detection noise.
    P2,
    /// Thomas, localization noise.
    T1,
    /// Thomas, detection noise.
    T2,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::P1, Scenario::P2, Scenario::T1, Scenario::T2];

    pub fn is_thomas(&self) -> bool {
        matches!(self, Scenario::T1 | Scenario::T2)
    }

    pub fn noise(&self) -> NoiseKind {
        match self {
            Scenario::P1 | Scenario::T1 => NoiseKind::Displacement,
            Scenario::P2 | Scenario::T2 => NoiseKind::HardcoreThinning,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::P1 => "P1",
            Scenario::P2 => "P2",
            Scenario::T1 => "T1",
            Scenario::T2 => "T2",
        }
    }

    fn default_beta(&self) -> Vec<f64> {
        if self.is_thomas() {
            vec![2.0, 0.75]
        } else {
            vec![1.0, 0.5]
        }
    }

    fn default_lambda_range(&self) -> (f64, f64) {
        if self.is_thomas() {
            (1e-3, 1e3)
        } else {
            (1e-4, 5e2)
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Parse(format!("unknown scenario `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selector {
    Bic,
    Eric,
    Cbic,
    Ceric,
    Stability,
}

impl Selector {
    pub fn as_str(&self) -> &'static str {
        match self {
            Selector::Bic => "BIC",
            Selector::Eric => "ERIC",
            Selector::Cbic => "cBIC",
            Selector::Ceric => "cERIC",
            Selector::Stability => "stability",
        }
    }

    pub fn criterion(&self) -> Option<CriterionKind> {
        match self {
            Selector::Bic => Some(CriterionKind::Bic),
            Selector::Eric => Some(CriterionKind::Eric),
            Selector::Cbic => Some(CriterionKind::CBic),
            Selector::Ceric => Some(CriterionKind::CEric),
            Selector::Stability => None,
        }
    }
}

impl std::str::FromStr for Selector {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bic" => Ok(Selector::Bic),
            "eric" => Ok(Selector::Eric),
            "cbic" => Ok(Selector::Cbic),
            "ceric" => Ok(Selector::Ceric),
            "stability" => Ok(Selector::Stability),
            _ => Err(Error::Parse(format!("unknown selector `{s}`"))),
        }
    }
}

/// Pair correlation used by the composite criteria.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SecondOrderMode {
    /// The true pair correlation of the simulated process.
    #[default]
    Oracle,
    /// Two-step minimum contrast from the unpenalized full-data fit.
    Estimated,
    /// `g ≡ 1`; the composite criteria reduce to the plain ones.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default = "defaults::n_grid")]
    pub n_grid: Vec<f64>,
    #[serde(default = "defaults::c_grid")]
    pub c_grid: Vec<f64>,
    #[serde(default = "defaults::reps")]
    pub reps: usize,
    #[serde(default = "defaults::penalties")]
    pub penalties: Vec<PenaltyKind>,
    #[serde(default = "defaults::selectors")]
    pub selectors: Vec<Selector>,
    #[serde(default)]
    pub second_order: SecondOrderMode,
    /// Coefficients of the leading covariates; the rest are zero.
    #[serde(default)]
    pub true_beta: Option<Vec<f64>>,
    #[serde(default = "defaults::thomas")]
    pub thomas: ThomasParams,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::covariate_seed")]
    pub covariate_seed: u64,
    #[serde(default = "defaults::p")]
    pub p: usize,
    #[serde(default = "defaults::grid_size")]
    pub grid_size: [usize; 2],
    #[serde(default = "defaults::window")]
    pub window: [f64; 4],
    #[serde(default = "defaults::smoothness")]
    pub smoothness: f64,
    #[serde(default)]
    pub lambda: Option<LambdaGrid>,
    #[serde(default)]
    pub stability: StabilityConfig,
    #[serde(default = "defaults::coarsen")]
    pub coarsen: usize,
    #[serde(default)]
    pub cutoff: CutoffRadius,
}

mod defaults {
    use super::*;

    pub fn n_grid() -> Vec<f64> {
        vec![50.0, 100.0, 150.0, 200.0, 250.0]
    }
    pub fn c_grid() -> Vec<f64> {
        vec![0.0, 1.0, 2.0, 3.0, 4.0]
    }
    pub fn reps() -> usize {
        20
    }
    pub fn penalties() -> Vec<PenaltyKind> {
        vec![PenaltyKind::L0, PenaltyKind::L1]
    }
    pub fn selectors() -> Vec<Selector> {
        vec![Selector::Bic, Selector::Eric, Selector::Stability]
    }
    pub fn thomas() -> ThomasParams {
        ThomasParams {
            kappa: 4e-3,
            sigma: 1.5,
        }
    }
    pub fn covariate_seed() -> u64 {
        1
    }
    pub fn p() -> usize {
        15
    }
    pub fn grid_size() -> [usize; 2] {
        [201, 101]
    }
    pub fn window() -> [f64; 4] {
        [0.0, 250.0, 0.0, 125.0]
    }
    pub fn smoothness() -> f64 {
        20.0
    }
    pub fn coarsen() -> usize {
        2
    }
}

impl ExperimentConfig {
    /// Defaults for `scenario`.
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            n_grid: defaults::n_grid(),
            c_grid: defaults::c_grid(),
            reps: defaults::reps(),
            penalties: defaults::penalties(),
            selectors: defaults::selectors(),
            second_order: SecondOrderMode::default(),
            true_beta: None,
            thomas: defaults::thomas(),
            seed: 0,
            covariate_seed: defaults::covariate_seed(),
            p: defaults::p(),
            grid_size: defaults::grid_size(),
            window: defaults::window(),
            smoothness: defaults::smoothness(),
            lambda: None,
            stability: StabilityConfig::default(),
            coarsen: defaults::coarsen(),
            cutoff: CutoffRadius::default(),
        }
    }

    pub fn beta(&self) -> Vec<f64> {
        self.true_beta.clone().unwrap_or_else(|| self.scenario.default_beta())
    }

    /// Indices of the covariates with nonzero true coefficient.
    pub fn truth(&self) -> Vec<usize> {
        self.beta()
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn lambda_grid(&self) -> Result<Vec<f64>> {
        match self.lambda {
            Some(g) => log_grid(g.max, g.min, g.count),
            None => {
                let (lo, hi) = self.scenario.default_lambda_range();
                log_grid(hi, lo, 35)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.reps == 0 {
            return cfg("reps must be >= 1".into());
        }
        if self.n_grid.is_empty() || self.c_grid.is_empty() {
            return cfg("n_grid and c_grid must be nonempty".into());
        }
        if self.n_grid.iter().any(|n| !(*n > 0.0 && n.is_finite())) {
            return cfg("expected counts must be positive".into());
        }
        if self.c_grid.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return cfg("noise magnitudes must be >= 0".into());
        }
        if self.penalties.is_empty() || self.selectors.is_empty() {
            return cfg("penalties and selectors must be nonempty".into());
        }
        let beta = self.beta();
        if beta.len() > self.p || beta.iter().any(|b| !b.is_finite()) {
            return cfg(format!("true_beta needs at most p = {} finite values", self.p));
        }
        if self.coarsen == 0 {
            return cfg("coarsen must be >= 1".into());
        }
        ThomasParams::new(self.thomas.kappa, self.thomas.sigma).map_err(|e| Error::Config(e.to_string()))?;
        let mut stab = self.stability.clone();
        stab.seed = 0;
        stab.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.lambda_grid().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

/// Parses a TOML experiment file.
///
/// Top-level keys are shared defaults. Each table named after a scenario
/// (`[P1]`, `[T2]`, ...) declares one experiment and overrides the
/// defaults; without such tables the top level must name a `scenario`.
pub fn parse_config(text: &str) -> Result<Vec<ExperimentConfig>> {
    let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
    let mut base = toml::Table::new();
    let mut sections = Vec::new();
    for (k, v) in table {
        match (k.parse::<Scenario>(), v) {
            (Ok(sc), toml::Value::Table(t)) => sections.push((sc, t)),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    let build = |t: toml::Table| -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::Value::Table(t)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    };
    if sections.is_empty() {
        return Ok(vec![build(base)?]);
    }
    sections.sort_by_key(|(sc, _)| *sc);
    sections
        .into_iter()
        .map(|(sc, t)| {
            let mut merged = base.clone();
            merged.extend(t);
            merged.insert("scenario".into(), toml::Value::String(sc.as_str().into()));
            build(merged)
        })
        .collect()
}

/// Fixed inputs shared by every repetition of an experiment.
pub struct BenchContext {
    pub config: ExperimentConfig,
    pub field: CovariateField,
    /// Quadrature on the simulation window.
    pub sim_quad: Arc<QuadratureScheme>,
    /// Quadrature on the fitting window (eroded by 4σ for Thomas).
    pub fit_quad: Arc<QuadratureScheme>,
    pub lambda_grid: Vec<f64>,
}

impl BenchContext {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let [x0, x1, y0, y1] = config.window;
        let window = Window::new(x0, x1, y0, y1)?;
        let grid = Grid::covering(&window, config.grid_size[0], config.grid_size[1])?;
        let field = synth_covariates(config.covariate_seed, config.p, &grid, config.smoothness)?;
        let sim_quad = Arc::new(make_quadrature(&field, &window)?);
        let fit_quad = if config.scenario.is_thomas() {
            Arc::new(make_quadrature(&field, &window.erode(4.0 * config.thomas.sigma)?)?)
        } else {
            sim_quad.clone()
        };
        let lambda_grid = config.lambda_grid()?;
        Ok(Self {
            config,
            field,
            sim_quad,
            fit_quad,
            lambda_grid,
        })
    }

    /// Data-generating model calibrated to `n` expected points on the simulation window.
    pub fn true_model(&self, n: f64) -> Result<LogLinearModel> {
        let mut beta = self.config.beta();
        beta.resize(self.config.p, 0.0);
        calibrate_intercept(&LogLinearModel::new(0.0, beta)?, &self.sim_quad, n)
    }

    /// Observed pattern of one repetition, restricted to the fitting window.
    pub fn observe(&self, n_index: usize, c_index: usize, rep: usize) -> Result<PointPattern> {
        let cfg = &self.config;
        let n = cfg.n_grid[n_index];
        let c = cfg.c_grid[c_index];
        let model = self.true_model(n)?;
        let sim_seed = rng::derive_seed(cfg.seed, &[1, n_index as u64, rep as u64]);
        let mut r = rng::stream(sim_seed, 0);
        let clean = if cfg.scenario.is_thomas() {
            sample_thomas(&model, &cfg.thomas, &self.sim_quad, &mut r)?
        } else {
            sample_poisson(&model, &self.sim_quad, &mut r)?
        };
        let noise_seed = rng::derive_seed(cfg.seed, &[2, n_index as u64, c_index as u64, rep as u64]);
        let spec = NoiseSpec::new(cfg.scenario.noise(), c, self.field.grid().dx)?.with_cutoff(cfg.cutoff);
        let noisy = spec.apply(&clean, &mut rng::stream(noise_seed, 0));
        Ok(noisy.restrict(self.fit_quad.window()))
    }

    fn second_order(&self, pattern: &PointPattern, first_step: &LogLinearModel) -> Result<SecondOrderSpec> {
        let pcf = match self.config.second_order {
            SecondOrderMode::None => Pcf::Poisson,
            SecondOrderMode::Oracle if self.config.scenario.is_thomas() => Pcf::Thomas(self.config.thomas),
            SecondOrderMode::Oracle => Pcf::Poisson,
            SecondOrderMode::Estimated => {
                let mut spec = two_step_fit(pattern, &self.field, first_step)?;
                spec.coarsen = self.config.coarsen;
                return Ok(spec);
            }
        };
        SecondOrderSpec::new(pcf, self.config.coarsen)
    }
}

/// Selection of one penalty/selector pair in one repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct RepSelection {
    pub penalty: PenaltyKind,
    pub selector: Selector,
    pub support: Vec<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepResult {
    pub n_points: usize,
    pub selections: Vec<RepSelection>,
}

fn run_penalty(
    ctx: &BenchContext,
    pattern: &PointPattern,
    penalty: PenaltyKind,
    stab_seed: u64,
) -> Vec<(Selector, Result<Vec<usize>>)> {
    let cfg = &ctx.config;
    let criteria: Vec<Selector> = cfg.selectors.iter().copied().filter(|s| s.criterion().is_some()).collect();
    let mut out = Vec::with_capacity(cfg.selectors.len());
    let path_config = match PathConfig::new(penalty, ctx.lambda_grid.clone()) {
        Ok(p) => p,
        Err(e) => {
            let msg = e.to_string();
            return cfg.selectors.iter().map(|s| (*s, Err(Error::Config(msg.clone())))).collect();
        }
    };

    if !criteria.is_empty() {
        let prepared = (|| {
            let fit = build_fit_data(pattern, ctx.fit_quad.clone(), 1.0)?;
            let full = fit_unpenalized(&fit)?;
            let path = solve_path(&fit, penalty, &adaptive_weights(&full), &path_config)?;
            Ok::<_, Error>((fit, full, path))
        })();
        let mut spec_cache: Option<Result<SecondOrderSpec>> = None;
        for sel in criteria {
            let res = match &prepared {
                Err(e) => Err(Error::DegenerateData(e.to_string())),
                Ok((fit, full, path)) => {
                    let kind = sel.criterion().expect("criterion selector");
                    let spec = if kind.is_composite() {
                        let s = spec_cache.get_or_insert_with(|| ctx.second_order(pattern, full));
                        match s {
                            Ok(s) => Some(*s),
                            Err(e) => {
                                out.push((sel, Err(Error::DegenerateData(format!("second order: {e}")))));
                                continue;
                            }
                        }
                    } else {
                        None
                    };
                    select_by_criterion(path, fit, kind, spec.as_ref()).map(|r| r.support)
                }
            };
            out.push((sel, res));
        }
    }
    if cfg.selectors.contains(&Selector::Stability) {
        let res = (|| {
            let config = StabilityConfig {
                seed: stab_seed,
                ..cfg.stability.clone()
            };
            let path = stability_path(pattern, &ctx.fit_quad, penalty, &config, &path_config)?;
            let fit = build_fit_data(pattern, ctx.fit_quad.clone(), 1.0)?;
            match select_stable(&path, &fit) {
                Ok(r) => Ok(r.support),
                // The support is what is scored; a failed refit does not change it.
                Err(e) if e.is_numerical() => Ok(path.stable_support()),
                Err(e) => Err(e),
            }
        })();
        out.push((Selector::Stability, res));
    }
    out
}

/// One repetition of cell `(n_grid[n_index], c_grid[c_index])`.
pub fn run_cell(ctx: &BenchContext, n_index: usize, c_index: usize, rep: usize) -> RepResult {
    let cfg = &ctx.config;
    let pattern = ctx.observe(n_index, c_index, rep);
    let n_points = pattern.as_ref().map_or(0, |p| p.len());
    let mut selections = Vec::new();
    for (pi, &penalty) in cfg.penalties.iter().enumerate() {
        let results = match &pattern {
            Ok(p) if p.is_empty() => cfg
                .selectors
                .iter()
                .map(|s| (*s, Err(Error::DegenerateData("empty pattern".into()))))
                .collect(),
            Ok(p) => {
                let stab_seed = rng::derive_seed(
                    cfg.seed,
                    &[3, n_index as u64, c_index as u64, rep as u64, pi as u64],
                );
                run_penalty(ctx, p, penalty, stab_seed)
            }
            Err(e) => cfg
                .selectors
                .iter()
                .map(|s| (*s, Err(Error::DegenerateData(format!("simulation: {e}")))))
                .collect(),
        };
        for sel in &cfg.selectors {
            let res = results.iter().find(|(s, _)| s == sel).map(|(_, r)| r);
            let (support, error) = match res {
                Some(Ok(s)) => (s.clone(), None),
                Some(Err(e)) => (Vec::new(), Some(e.to_string())),
                None => (Vec::new(), Some("selector not run".into())),
            };
            selections.push(RepSelection {
                penalty,
                selector: *sel,
                support,
                error,
            });
        }
    }
    RepResult {
        n_points,
        selections,
    }
}

/// Metrics of one `(penalty, selector)` pair over a cell, or over all
/// cells when `n` and `c` are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub scenario: Scenario,
    pub penalty: PenaltyKind,
    pub selector: Selector,
    pub n: Option<f64>,
    pub c: Option<f64>,
    pub report: MetricsReport,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRow {
    pub scenario: Scenario,
    pub penalty: PenaltyKind,
    pub selector: Selector,
    pub n: f64,
    pub c: f64,
    pub rep: usize,
    pub n_points: usize,
    pub support: Vec<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchOutput {
    pub rows: Vec<GridRow>,
    pub diagnostics: Vec<DiagnosticRow>,
}

/// Runs every cell of the grid. Per-repetition failures count as empty
/// selections and are listed in the diagnostics.
pub fn run_grid(config: &ExperimentConfig) -> Result<BenchOutput> {
    let ctx = BenchContext::new(config.clone())?;
    run_grid_with(&ctx)
}

pub fn run_grid_with(ctx: &BenchContext) -> Result<BenchOutput> {
    let cfg = &ctx.config;
    let p = cfg.p;
    let truth = cfg.truth();
    let mut out = BenchOutput::default();
    let mut per_pair: BTreeMap<(usize, Selector), Vec<MetricsReport>> = BTreeMap::new();
    for (ni, &n) in cfg.n_grid.iter().enumerate() {
        for (ci, &c) in cfg.c_grid.iter().enumerate() {
            let reps: Vec<RepResult> = (0..cfg.reps)
                .into_par_iter()
                .map(|rep| run_cell(ctx, ni, ci, rep))
                .collect();
            for (pi, &penalty) in cfg.penalties.iter().enumerate() {
                for &selector in &cfg.selectors {
                    let mut outcomes = Vec::with_capacity(reps.len());
                    let mut failures = 0;
                    for (rep, r) in reps.iter().enumerate() {
                        let s = r
                            .selections
                            .iter()
                            .find(|s| s.penalty == penalty && s.selector == selector)
                            .expect("every pair is recorded");
                        failures += s.error.is_some() as usize;
                        outcomes.push(SelectionOutcome::from_supports(&s.support, &truth, p)?);
                        out.diagnostics.push(DiagnosticRow {
                            scenario: cfg.scenario,
                            penalty,
                            selector,
                            n,
                            c,
                            rep,
                            n_points: r.n_points,
                            support: s.support.clone(),
                            error: s.error.clone(),
                        });
                    }
                    let report = MetricsReport::from_outcomes(&outcomes)?;
                    info!(
                        "{} {} {} n={n} c={c}: tpr {:.3} fpr {:.3} f1 {:.3} pfer {:.3}",
                        cfg.scenario.as_str(),
                        penalty.as_str(),
                        selector.as_str(),
                        report.tpr,
                        report.fpr,
                        report.f1,
                        report.empirical_pfer
                    );
                    per_pair.entry((pi, selector)).or_default().push(report.clone());
                    out.rows.push(GridRow {
                        scenario: cfg.scenario,
                        penalty,
                        selector,
                        n: Some(n),
                        c: Some(c),
                        report,
                        failures,
                    });
                }
            }
        }
    }
    for ((pi, selector), reports) in per_pair {
        let failures = out
            .rows
            .iter()
            .filter(|r| r.penalty == cfg.penalties[pi] && r.selector == selector)
            .map(|r| r.failures)
            .sum();
        out.rows.push(GridRow {
            scenario: cfg.scenario,
            penalty: cfg.penalties[pi],
            selector,
            n: None,
            c: None,
            report: MetricsReport::mean(&reports)?,
            failures,
        });
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "all".to_string(), |x| x.to_string())
}

/// `scenario,penalty,selector,n,c,tpr,fpr,ppv,f1,phi_s,pfer,reps`; grand
/// means have `n` and `c` set to `all`, an undefined Φ_S is `NA`.
pub fn write_metrics_csv<W: Write>(out: W, rows: &[GridRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scenario", "penalty", "selector", "n", "c", "tpr", "fpr", "ppv", "f1", "phi_s", "pfer", "reps",
    ])?;
    for r in rows {
        w.write_record([
            r.scenario.as_str().to_string(),
            r.penalty.as_str().to_string(),
            r.selector.as_str().to_string(),
            opt(r.n),
            opt(r.c),
            r.report.tpr.to_string(),
            r.report.fpr.to_string(),
            r.report.ppv.to_string(),
            r.report.f1.to_string(),
            r.report.phi_s.map_or_else(|| "NA".to_string(), |v| v.to_string()),
            r.report.empirical_pfer.to_string(),
            r.report.reps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per repetition and pair, with the selected indices separated
/// by `;` and the failure message if any.
pub fn write_diagnostics_csv<W: Write>(out: W, rows: &[DiagnosticRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scenario", "penalty", "selector", "n", "c", "rep", "n_points", "support", "error"])?;
    for r in rows {
        let support: Vec<String> = r.support.iter().map(usize::to_string).collect();
        w.write_record([
            r.scenario.as_str().to_string(),
            r.penalty.as_str().to_string(),
            r.selector.as_str().to_string(),
            r.n.to_string(),
            r.c.to_string(),
            r.rep.to_string(),
            r.n_points.to_string(),
            support.join(";"),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_sections_override_defaults() {
        let text = r#"
reps = 3
n_grid = [100.0]
c_grid = [0.0, 2.0]
selectors = ["bic", "stability"]

[T1]
penalties = ["L1"]

[P1]
reps = 2
"#;
        let cfgs = parse_config(text).unwrap();
        assert_eq!(cfgs.len(), 2);
        assert_eq!(cfgs[0].scenario, Scenario::P1);
        assert_eq!(cfgs[0].reps, 2);
        assert_eq!(cfgs[0].penalties, vec![PenaltyKind::L0, PenaltyKind::L1]);
        assert_eq!(cfgs[1].scenario, Scenario::T1);
        assert_eq!(cfgs[1].reps, 3);
        assert_eq!(cfgs[1].penalties, vec![PenaltyKind::L1]);
        assert_eq!(cfgs[1].beta(), vec![2.0, 0.75]);
        assert_eq!(cfgs[1].lambda_grid().unwrap()[0], 1e3);
    }

    #[test]
    fn config_errors() {
        assert!(matches!(parse_config("reps = 3"), Err(Error::Config(_))));
        assert!(matches!(parse_config("scenario = \"P1\"\nreps = 0"), Err(Error::Config(_))));
        assert!(matches!(parse_config("scenario = \"P1\"\nbogus = 1"), Err(Error::Config(_))));
        assert!(matches!(parse_config("scenario = \"P1\"\n[stability]\npi_th = 0.4"), Err(Error::Config(_))));
        assert!(parse_config("scenario = \"P1\"\n[stability]\nk = 20").is_ok());
    }

    #[test]
    fn truth_follows_beta() {
        let mut c = ExperimentConfig::new(Scenario::P2);
        assert_eq!(c.truth(), vec![0, 1]);
        c.true_beta = Some(vec![0.0, 0.0, 1.0]);
        assert_eq!(c.truth(), vec![2]);
    }
}
