//! `dcvs` command-line driver.
//!
//! Exit codes: 0 success, 2 input or validation error, 3 numerical failure.

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dcvs::baselines::{run_baseline, BaselineConfig, Method};
use dcvs::experiments::spatial::{spatial_fit, SpatialDataset};
use dcvs::experiments::{run_replications, summarize, write_csv, DesignKind};
use dcvs::io::{read_matrix_csv, read_vector_csv};
use dcvs::model::{build_instance, standardize_columns, standardize_vector, Structure};
use dcvs::objective::summary_from_evaluation;
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::{InputDigest, Manifest, OutputDir};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<dcvs::Error> for CliError {
    fn from(e: dcvs::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "dcvs", version, about = "Bayesian variable selection by difference-of-convex marginal-likelihood minimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one regression problem from CSV inputs.
    Fit(FitArgs),
    /// Run a replicated simulation scenario.
    Simulate(SimulateArgs),
    /// Radially monotone fit on gridded cells.
    Spatial(SpatialArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn is_on(self) -> bool {
        self == Toggle::On
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    #[arg(long)]
    pub box_lo: Option<f64>,
    #[arg(long)]
    pub box_hi: Option<f64>,
    #[arg(long)]
    pub a0: Option<f64>,
    #[arg(long)]
    pub b0: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub rel_tol: Option<f64>,
    #[arg(long, value_enum)]
    pub accel: Option<Toggle>,
    #[arg(long)]
    pub accel_period: Option<usize>,
    /// Structure constraint as JSON or TOML (`kind = "disjoint_groups"`, ...);
    /// group members are 1-based.
    #[arg(long)]
    pub constraint_file: Option<PathBuf>,
    /// Worker threads for replicate-level parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, value_enum)]
    pub standardize_x: Option<Toggle>,
    #[arg(long, value_enum)]
    pub standardize_y: Option<Toggle>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Design matrix CSV, one sample per row.
    #[arg(long)]
    x: PathBuf,
    /// Single-column response CSV.
    #[arg(long)]
    y: PathBuf,
    /// Inputs carry a single header row.
    #[arg(long)]
    header: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    replications: Option<usize>,
    /// `independent` or `toeplitz(rho)`.
    #[arg(long)]
    design: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    /// Comma-separated methods to compare (overrides --method).
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Option<Vec<Method>>,
}

#[derive(Args, Debug)]
struct SpatialArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// CSV with columns cell_id,x,y,score,response.
    #[arg(long)]
    input: PathBuf,
    /// Replace responses by ln(1 + w * response).
    #[arg(long)]
    log1p: bool,
    /// Single-column CSV of per-cell weights for --log1p (default 1).
    #[arg(long)]
    weights: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, out_dir) = match &cli.command {
        Command::Fit(a) => ("fit", a.common.out_dir.clone()),
        Command::Simulate(a) => ("simulate", a.common.out_dir.clone()),
        Command::Spatial(a) => ("spatial", a.common.out_dir.clone()),
    };
    let mut manifest = Manifest::new(name);
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a, &mut manifest),
        Command::Simulate(a) => cmd_simulate(a, &mut manifest),
        Command::Spatial(a) => cmd_spatial(a, &mut manifest),
    };
    let code = match &result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("dcvs {name}: {e}");
            manifest.fail(e);
            e.exit_code()
        }
    };
    if let Err(e) = manifest.write(&out_dir) {
        eprintln!("dcvs {name}: could not write manifest: {e}");
        return ExitCode::from(if code == 0 { 2 } else { code });
    }
    ExitCode::from(code)
}

fn read_input(path: &Path, manifest: &mut Manifest) -> CliResult<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    manifest.inputs.push(InputDigest::of(path, &bytes));
    Ok(bytes)
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(CliError::Input("--jobs must be at least 1".into())),
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j)
                .build()
                .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[derive(Serialize)]
struct CoefficientRow {
    index: usize,
    d_star: f64,
    theta_hat: f64,
    t_scale: f64,
    t_df: f64,
}

#[derive(Serialize)]
struct FitSummary<'a> {
    method: &'a str,
    status: &'a str,
    iterations: usize,
    initial_loss: f64,
    final_loss: f64,
    final_residual: Option<f64>,
    sigma2_mean: Option<f64>,
    n: usize,
    p: usize,
}

fn cmd_fit(args: &FitArgs, manifest: &mut Manifest) -> CliResult<()> {
    let cfg = RunConfig::resolve(&args.common, manifest)?;
    manifest.set_config(&cfg);
    let x_bytes = read_input(&args.x, manifest)?;
    let y_bytes = read_input(&args.y, manifest)?;
    let header = args.header || cfg.header;
    let mut x = read_matrix_csv(x_bytes.as_slice(), header).map_err(|e| CliError::Input(format!("{}: {e}", args.x.display())))?;
    let mut y = read_vector_csv(y_bytes.as_slice(), header).map_err(|e| CliError::Input(format!("{}: {e}", args.y.display())))?;
    if cfg.standardize_x {
        x = standardize_columns(&x)?;
    }
    if cfg.standardize_y {
        y = standardize_vector(&y)?;
    }
    let inst = build_instance(x, y, cfg.a0, cfg.b0)?;
    let bcfg = cfg.baseline_config();
    check_method_supports(&bcfg)?;
    let res = with_pool(cfg.jobs, || run_baseline(&inst, &bcfg))??;
    let post = summary_from_evaluation(&inst, &res.evaluation);

    let out = OutputDir::create(&args.common.out_dir)?;
    let rows: Vec<CoefficientRow> = (0..inst.p())
        .map(|j| CoefficientRow {
            index: j,
            d_star: res.d[j],
            theta_hat: post.theta_hat[j],
            t_scale: post.marginal_scale[j],
            t_df: post.marginal_df,
        })
        .collect();
    manifest.outputs.push(out.write_with("coefficients.csv", |w| write_csv(w, &rows).map_err(CliError::from))?);
    manifest.outputs.push(out.write_with("trace.jsonl", |w| {
        res.trace.write_jsonl(w).map_err(|e| CliError::Input(e.to_string()))
    })?);
    let summary = FitSummary {
        method: bcfg.method.as_str(),
        status: res.trace.status.as_str(),
        iterations: res.trace.iterations(),
        initial_loss: res.trace.initial_loss,
        final_loss: res.trace.final_loss(),
        final_residual: res.trace.records.last().map(|r| r.residual),
        sigma2_mean: post.sigma2_mean,
        n: inst.n(),
        p: inst.p(),
    };
    manifest.outputs.push(out.write_json("summary.json", &summary)?);
    Ok(())
}

fn check_method_supports(cfg: &BaselineConfig) -> CliResult<()> {
    if cfg.method != Method::Dc && cfg.solver.constraint.structure != Structure::None {
        return Err(CliError::Input(format!(
            "method {} supports box constraints only; structured constraints need --method dc",
            cfg.method
        )));
    }
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs, manifest: &mut Manifest) -> CliResult<()> {
    let mut cfg = RunConfig::resolve(&args.common, manifest)?;
    if let Some(r) = args.replications {
        cfg.scenario.replications = r;
    }
    if let Some(d) = &args.design {
        cfg.scenario.design = d.parse::<DesignKind>()?;
    }
    if let Some(n) = args.n {
        cfg.scenario.n = n;
    }
    if let Some(p) = args.p {
        cfg.scenario.p = p;
    }
    if let Some(seed) = args.common.seed {
        cfg.scenario.seed = seed;
    }
    if let Some(m) = &args.methods {
        cfg.methods = m.clone();
    } else if let Some(m) = args.common.method {
        cfg.methods = vec![m];
    }
    if let Some(t) = args.common.a0 {
        cfg.scenario.a0 = t;
    }
    if let Some(t) = args.common.b0 {
        cfg.scenario.b0 = t;
    }
    if let Some(t) = args.common.standardize_y {
        cfg.scenario.standardize_y = t.is_on();
    }
    if cfg.methods.is_empty() {
        return Err(CliError::Input("no methods selected".into()));
    }
    manifest.set_config(&cfg);
    cfg.scenario.validate()?;
    let bcfg = cfg.baseline_config();
    check_method_supports(&bcfg)?;
    bcfg.validate(cfg.scenario.p)?;
    let rows = with_pool(cfg.jobs, || run_replications(&cfg.scenario, &cfg.methods, &bcfg))??;
    let summaries = summarize(&rows);

    let out = OutputDir::create(&args.common.out_dir)?;
    manifest.outputs.push(out.write_with("results.csv", |w| write_csv(w, &rows).map_err(CliError::from))?);
    manifest.outputs.push(out.write_with("summary.csv", |w| write_csv(w, &summaries).map_err(CliError::from))?);
    Ok(())
}

#[derive(Serialize)]
struct SpatialSummary<'a> {
    status: &'a str,
    iterations: usize,
    final_loss: f64,
    cells: usize,
    cells_at_upper: usize,
    median_d: f64,
}

fn cmd_spatial(args: &SpatialArgs, manifest: &mut Manifest) -> CliResult<()> {
    let cfg = RunConfig::resolve(&args.common, manifest)?;
    manifest.set_config(&cfg);
    if cfg.method != Method::Dc {
        return Err(CliError::Input("the spatial fit uses the score-monotone constraint and needs --method dc".into()));
    }
    let bytes = read_input(&args.input, manifest)?;
    let mut data = SpatialDataset::read_csv(bytes.as_slice()).map_err(|e| CliError::Input(format!("{}: {e}", args.input.display())))?;
    if args.log1p || cfg.log1p {
        let weights = match &args.weights {
            Some(path) => {
                let wb = read_input(path, manifest)?;
                let w = read_vector_csv(wb.as_slice(), cfg.header)
                    .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
                Some(w.as_slice().to_vec())
            }
            None => None,
        };
        data.log1p_transform(weights.as_deref())?;
    }
    let fit = with_pool(cfg.jobs, || spatial_fit(&data, &cfg.solver, cfg.a0, cfg.b0))??;

    let out = OutputDir::create(&args.common.out_dir)?;
    manifest.outputs.push(out.write_with("spatial_fit.csv", |w| fit.write_csv(&data, w).map_err(CliError::from))?);
    manifest.outputs.push(out.write_with("trace.jsonl", |w| {
        fit.result.trace.write_jsonl(w).map_err(|e| CliError::Input(e.to_string()))
    })?);
    let upper = cfg.solver.constraint.bounds.upper;
    let summary = SpatialSummary {
        status: fit.result.trace.status.as_str(),
        iterations: fit.result.trace.iterations(),
        final_loss: fit.result.trace.final_loss(),
        cells: data.len(),
        cells_at_upper: fit.d_star.iter().filter(|&&d| (d - upper).abs() <= 1e-12).count(),
        median_d: dcvs::experiments::median(&fit.d_star),
    };
    manifest.outputs.push(out.write_json("summary.json", &summary)?);
    Ok(())
}
