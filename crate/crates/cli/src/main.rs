use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ppselect::bench::{parse_config, run_grid, write_diagnostics_csv, write_metrics_csv};
use ppselect::criteria::{select_by_criterion, CriterionKind, Pcf, SecondOrderSpec};
use ppselect::geometry::{make_quadrature, synth_covariates, CovariateField, Grid, Window};
use ppselect::likelihood::{build_fit_data, fit_unpenalized};
use ppselect::secondorder::two_step_fit;
use ppselect::simulate::{calibrate_intercept, sample_poisson, sample_thomas, LogLinearModel, ThomasParams};
use ppselect::solver::{adaptive_weights, log_grid, solve_path, PathConfig, PenaltyKind};
use ppselect::stability::{select_stable, stability_path, StabilityConfig};
use ppselect::{io, rng, Error};

#[derive(Parser)]
#[command(name = "ppselect", version, about = "Covariate selection for spatial point process intensities")]
struct Cli {
    /// Print progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a Poisson or Thomas pattern with log-linear intensity.
    Simulate(SimulateArgs),
    /// Penalized fit at one λ or along a path.
    Fit(FitArgs),
    /// Select covariates with an information criterion or stability selection.
    Select(SelectArgs),
    /// Run Monte Carlo experiments from a config file.
    Bench(BenchArgs),
}

#[derive(Args)]
struct CovariateArgs {
    /// Wide `x,y,<name>...` CSV, a directory of `x,y,value` CSVs, or `synth`.
    #[arg(long)]
    covariates: String,
    /// Number of synthetic covariates.
    #[arg(long, default_value_t = 15)]
    p: usize,
    #[arg(long, default_value_t = 1)]
    covariate_seed: u64,
    /// Synthetic grid as `NXxNY`.
    #[arg(long, default_value = "201x101")]
    grid: String,
    /// Correlation length of the synthetic covariates.
    #[arg(long, default_value_t = 20.0)]
    smoothness: f64,
    /// Observation window `xmin,xmax,ymin,ymax`; defaults to the covariate grid.
    #[arg(long)]
    window: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Process {
    Poisson,
    Thomas,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    process: Process,
    #[command(flatten)]
    cov: CovariateArgs,
    /// Expected number of points.
    #[arg(long)]
    target_n: f64,
    /// Comma-separated coefficients of the leading covariates.
    #[arg(long, default_value = "1,0.5")]
    beta: String,
    #[arg(long, default_value_t = 4e-3)]
    kappa: f64,
    #[arg(long, default_value_t = 1.5)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the covariates used.
    #[arg(long)]
    covariates_out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    pattern: PathBuf,
    #[command(flatten)]
    cov: CovariateArgs,
    #[arg(long)]
    penalty: PenaltyKind,
    #[arg(long, conflicts_with = "path", required_unless_present = "path")]
    lambda: Option<f64>,
    /// Path grid `min,max,count`.
    #[arg(long)]
    path: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    pattern: PathBuf,
    #[command(flatten)]
    cov: CovariateArgs,
    #[arg(long)]
    penalty: PenaltyKind,
    /// bic, eric, cbic, ceric or stability.
    #[arg(long)]
    selector: String,
    /// Path grid `min,max,count`.
    #[arg(long, default_value = "1e-4,5e2,35")]
    path: String,
    #[arg(long, default_value_t = 1.0)]
    pfer: f64,
    #[arg(long, default_value_t = 50)]
    k: usize,
    #[arg(long, default_value_t = 0.5)]
    pthin: f64,
    #[arg(long, default_value_t = 0.9)]
    pith: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pair correlation for cbic/ceric: `estimated`, `poisson` or `thomas:KAPPA,SIGMA`.
    #[arg(long, default_value = "estimated")]
    pcf: String,
    #[arg(long)]
    out: PathBuf,
    /// Also write the stability path as `lambda,covariate,pi`.
    #[arg(long)]
    stability_path_out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Override the repetitions of every experiment.
    #[arg(long)]
    reps: Option<usize>,
}

/// Input or configuration problem (exit code 2).
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(ConfigError(msg.into()))
}

fn parse_list(s: &str, what: &str) -> anyhow::Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| config_err(format!("bad {what} `{s}`"))))
        .collect()
}

fn parse_grid_size(s: &str) -> anyhow::Result<(usize, usize)> {
    let (a, b) = s
        .split_once('x')
        .ok_or_else(|| config_err(format!("grid must look like 201x101, got `{s}`")))?;
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| config_err(format!("bad grid `{s}`")));
    Ok((parse(a)?, parse(b)?))
}

fn parse_path(s: &str) -> anyhow::Result<Vec<f64>> {
    let v: Vec<&str> = s.split(',').collect();
    if v.len() != 3 {
        bail!(config_err(format!("path must be min,max,count, got `{s}`")));
    }
    let min: f64 = v[0].trim().parse().map_err(|_| config_err(format!("bad path `{s}`")))?;
    let max: f64 = v[1].trim().parse().map_err(|_| config_err(format!("bad path `{s}`")))?;
    let count: usize = v[2].trim().parse().map_err(|_| config_err(format!("bad path `{s}`")))?;
    Ok(log_grid(max, min, count)?)
}

fn load_covariates(args: &CovariateArgs) -> anyhow::Result<(CovariateField, Window)> {
    let field = if args.covariates == "synth" {
        let (nx, ny) = parse_grid_size(&args.grid)?;
        let extent = match &args.window {
            Some(w) => parse_window(w)?,
            None => Window::new(0.0, 250.0, 0.0, 125.0)?,
        };
        let grid = Grid::covering(&extent, nx, ny)?;
        synth_covariates(args.covariate_seed, args.p, &grid, args.smoothness)?
    } else {
        io::read_covariates(Path::new(&args.covariates))
            .with_context(|| format!("reading covariates from {}", args.covariates))?
    };
    let window = match &args.window {
        Some(w) => parse_window(w)?,
        None => field.grid().extent(),
    };
    Ok((field, window))
}

fn parse_window(s: &str) -> anyhow::Result<Window> {
    let v = parse_list(s, "window")?;
    if v.len() != 4 {
        bail!(config_err(format!("window must be xmin,xmax,ymin,ymax, got `{s}`")));
    }
    Ok(Window::new(v[0], v[1], v[2], v[3])?)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let (field, window) = load_covariates(&args.cov)?;
    let quad = make_quadrature(&field, &window)?;
    let mut beta = parse_list(&args.beta, "beta")?;
    if beta.len() > field.p() {
        bail!(config_err(format!("{} coefficients for {} covariates", beta.len(), field.p())));
    }
    beta.resize(field.p(), 0.0);
    let model = calibrate_intercept(&LogLinearModel::new(0.0, beta)?, &quad, args.target_n)?;
    let mut r = rng::stream(args.seed, 0);
    let pattern = match args.process {
        Process::Poisson => sample_poisson(&model, &quad, &mut r)?,
        Process::Thomas => sample_thomas(&model, &ThomasParams::new(args.kappa, args.sigma)?, &quad, &mut r)?,
    };
    log::info!("simulated {} points", pattern.len());
    let mut w = create(&args.out)?;
    io::write_pattern_csv(&mut w, &pattern)?;
    w.flush()?;
    if let Some(path) = args.covariates_out {
        let mut w = create(&path)?;
        io::write_covariates_csv(&mut w, &field)?;
        w.flush()?;
    }
    Ok(())
}

fn read_pattern(path: &Path, window: Window) -> anyhow::Result<ppselect::PointPattern> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(io::read_pattern_csv(file, window)?)
}

fn fit(args: FitArgs) -> anyhow::Result<()> {
    let (field, window) = load_covariates(&args.cov)?;
    let quad = Arc::new(make_quadrature(&field, &window)?);
    let pattern = read_pattern(&args.pattern, window)?;
    let data = build_fit_data(&pattern, quad, 1.0)?;
    let full = fit_unpenalized(&data)?;
    let grid = match (&args.path, args.lambda) {
        (Some(p), _) => parse_path(p)?,
        (None, Some(l)) => vec![l],
        (None, None) => bail!(config_err("either --lambda or --path is required")),
    };
    let config = PathConfig::new(args.penalty, grid)?;
    let path = solve_path(&data, args.penalty, &adaptive_weights(&full), &config)?;
    for d in &path.diagnostics {
        log::info!(
            "lambda {:.4e}: {} iterations, objective {:.6}, converged {}",
            d.lambda,
            d.iterations,
            d.objective,
            d.converged
        );
    }
    let rows: Vec<(f64, LogLinearModel)> = path.lambdas.iter().copied().zip(path.models).collect();
    let mut w = create(&args.out)?;
    io::write_coefficients_csv(&mut w, field.names(), &rows)?;
    w.flush()?;
    Ok(())
}

fn parse_pcf(s: &str) -> anyhow::Result<Option<Pcf>> {
    match s {
        "estimated" => Ok(None),
        "poisson" => Ok(Some(Pcf::Poisson)),
        _ => {
            let params = s
                .strip_prefix("thomas:")
                .ok_or_else(|| config_err(format!("unknown pair correlation `{s}`")))?;
            let v = parse_list(params, "Thomas parameters")?;
            if v.len() != 2 {
                bail!(config_err("thomas:KAPPA,SIGMA needs two values"));
            }
            Ok(Some(Pcf::Thomas(ThomasParams::new(v[0], v[1])?)))
        }
    }
}

fn select(args: SelectArgs) -> anyhow::Result<()> {
    let (field, window) = load_covariates(&args.cov)?;
    let quad = Arc::new(make_quadrature(&field, &window)?);
    let pattern = read_pattern(&args.pattern, window)?;
    let grid = parse_path(&args.path)?;
    let config = PathConfig::new(args.penalty, grid)?;
    let data = build_fit_data(&pattern, quad.clone(), 1.0)?;
    let mut echo = json!({
        "penalty": args.penalty.as_str(),
        "selector": args.selector,
        "path": args.path,
    });
    let result = if args.selector.eq_ignore_ascii_case("stability") {
        let stab = StabilityConfig {
            k: args.k,
            p_thin: args.pthin,
            pi_th: args.pith,
            pfer_target: args.pfer,
            seed: args.seed,
            ..StabilityConfig::default()
        };
        stab.validate().map_err(|e| config_err(e.to_string()))?;
        echo["stability"] = serde_json::to_value(&stab)?;
        let path = stability_path(&pattern, &quad, args.penalty, &stab, &config)?;
        if let Some(out) = &args.stability_path_out {
            let mut w = create(out)?;
            path.write_csv(&mut w, field.names())?;
            w.flush()?;
        }
        echo["lambda_range"] = json!([path.range.lambda_min, path.range.lambda_max]);
        select_stable(&path, &data)?
    } else {
        let kind: CriterionKind = args.selector.parse().map_err(|e: Error| config_err(e.to_string()))?;
        let full = fit_unpenalized(&data)?;
        let path = solve_path(&data, args.penalty, &adaptive_weights(&full), &config)?;
        let spec = if kind.is_composite() {
            let spec = match parse_pcf(&args.pcf)? {
                Some(pcf) => SecondOrderSpec::with_pcf(pcf),
                None => two_step_fit(&pattern, &field, &full)?,
            };
            echo["pcf"] = serde_json::to_value(spec.pcf)?;
            Some(spec)
        } else {
            None
        };
        select_by_criterion(&path, &data, kind, spec.as_ref())?
    };
    let names = field.names();
    let coefficients: serde_json::Map<String, serde_json::Value> = names
        .iter()
        .zip(&result.coefficients.beta)
        .map(|(n, b)| (n.clone(), json!(b)))
        .collect();
    let doc = json!({
        "support": result.support.iter().map(|&i| names[i].clone()).collect::<Vec<_>>(),
        "support_indices": result.support,
        "log_omega": result.coefficients.log_omega,
        "coefficients": coefficients,
        "pfer_bound": result.pfer_bound,
        "lambda": result.lambda,
        "notes": result.notes,
        "config": echo,
    });
    let mut w = create(&args.out)?;
    serde_json::to_writer_pretty(&mut w, &doc)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn bench(args: BenchArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| config_err(format!("reading {}: {e}", args.config.display())))?;
    let mut configs = parse_config(&text)?;
    if let Some(r) = args.reps {
        if r == 0 {
            bail!(config_err("--reps must be >= 1"));
        }
        for c in &mut configs {
            c.reps = r;
        }
    }
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    for cfg in &configs {
        log::info!("running {} with {} reps", cfg.scenario.as_str(), cfg.reps);
        let out = run_grid(cfg)?;
        rows.extend(out.rows);
        diagnostics.extend(out.diagnostics);
    }
    let failures = diagnostics.iter().filter(|d| d.error.is_some()).count();
    if failures > 0 {
        log::warn!("{failures} selections failed and were scored as empty");
    }
    let mut w = create(&args.out_dir.join("metrics.csv"))?;
    write_metrics_csv(&mut w, &rows)?;
    w.flush()?;
    let mut w = create(&args.out_dir.join("diagnostics.csv"))?;
    write_diagnostics_csv(&mut w, &diagnostics)?;
    w.flush()?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_numerical() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let res = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Select(a) => select(a),
        Command::Bench(a) => bench(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
