//! Command-line batch surface over [`hfvol`]: tick ingestion, long-memory
//! diagnostics, APARCH estimation, simulation and residual checks, one
//! subcommand each. Every run writes a fixed set of files into the output
//! directory plus a `<command>-manifest.json` recording the inputs, the
//! effective configuration, the seed where one applies, and the name of
//! every file produced. Outputs depend only on inputs, flags and seed —
//! never the clock — so rerunning an invocation rewrites identical bytes.
//!
//! Exit codes: 0 success; 2 usage (bad flags, malformed order or
//! distribution); 3 data (unreadable or malformed inputs, lag ranges past
//! the sample, calendars rejecting the bar width); 4 non-convergence (a fit
//! that exhausts its budget still writes outputs before exiting 4; a grid
//! search with no usable fit writes none); 5 internal faults.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hfvol::aparch::{simulate, AparchParams, DistSpec, DEFAULT_BURN_IN};
use hfvol::calendar::TradingCalendar;
use hfvol::estimator::{fit, model_search, standardized_residuals, FitResult, ModelOrder,
    OptimizerConfig};
use hfvol::ingest::{ingest, IngestConfig, TickFormat};
use hfvol::longmem::{acf, default_max_lag, periodicity_profile, power_sweep,
    DEFAULT_PROFILE_DAYS, DEFAULT_SWEEP_KS};
use hfvol::series::{power_transform, PowerTransform, ReturnSeries};
use hfvol::{Error, Result};
use serde::Serialize;
use serde_json::json;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NO_CONVERGE: u8 = 4;
const EXIT_INTERNAL: u8 = 5;

#[derive(Parser)]
#[command(name = "hfvol", version, about = "High-frequency volatility toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a tick file into front-contract bars and roll-adjusted returns
    Ingest(IngestArgs),
    /// Autocorrelations of a return series with a significance band
    Acf(AcfArgs),
    /// Significant-lag counts of power-transformed returns across exponents
    Sweep(SweepArgs),
    /// Fit an APARCH model with an ARMA mean by maximum likelihood
    Fit(FitArgs),
    /// Fit a grid of orders and distributions, ranked by BIC
    Search(SearchArgs),
    /// Draw a seeded sample path from given APARCH parameters
    Simulate(SimulateArgs),
    /// Standardized residuals of a fit, their sweep and periodicity profile
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct OutArgs {
    /// Directory outputs are written into (created if missing)
    #[arg(long, env = "HFVOL_OUTPUT_DIR", default_value = ".")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    /// Delimited tick file
    #[arg(long)]
    input: PathBuf,
    /// Tick format descriptor JSON; defaults to comma-separated
    /// timestamp,expiry,price,volume,type columns
    #[arg(long)]
    format: Option<PathBuf>,
    /// Bundled calendar name (ftse100, gilt, sterling) or calendar config
    /// file path
    #[arg(long)]
    calendar: String,
    /// Bar width in minutes; must divide the session exactly
    #[arg(long, default_value_t = 5)]
    bar_minutes: u32,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct AcfArgs {
    /// Return series CSV (timestamp,value)
    #[arg(long)]
    input: PathBuf,
    /// Largest lag; defaults to a tenth of the sample
    #[arg(long)]
    max_lag: Option<usize>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// Return series CSV (timestamp,value)
    #[arg(long)]
    input: PathBuf,
    /// Comma-separated exponents, e.g. "0.5,1,1.5,2"
    #[arg(long)]
    k_list: Option<String>,
    /// Largest lag; defaults to a tenth of the sample
    #[arg(long)]
    max_lag: Option<usize>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct FitArgs {
    /// Return series CSV (timestamp,value)
    #[arg(long)]
    input: PathBuf,
    /// Model order as "p,q,ar,ma", e.g. "1,1,1,1"
    #[arg(long)]
    order: String,
    /// Innovation family: normal, t or ged
    #[arg(long, default_value = "normal")]
    dist: String,
    /// Starting shape for t (degrees of freedom) or ged
    #[arg(long)]
    shape: Option<f64>,
    /// How many preset optimizer starting points to try
    #[arg(long, default_value_t = 3)]
    starts: usize,
    /// Optimizer iteration budget per start
    #[arg(long, default_value_t = 500)]
    max_iterations: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SearchArgs {
    /// Return series CSV (timestamp,value)
    #[arg(long)]
    input: PathBuf,
    /// Semicolon-separated orders, e.g. "1,1,1,1;1,2,1,1"
    #[arg(long)]
    order: String,
    /// Comma-separated families out of normal, t, ged
    #[arg(long, default_value = "normal")]
    dist: String,
    /// Starting shape for t or ged entries
    #[arg(long)]
    shape: Option<f64>,
    /// How many preset optimizer starting points to try per fit
    #[arg(long, default_value_t = 3)]
    starts: usize,
    /// Optimizer iteration budget per start
    #[arg(long, default_value_t = 500)]
    max_iterations: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// APARCH parameter JSON file
    #[arg(long)]
    params: PathBuf,
    /// Innovation family: normal, t or ged
    #[arg(long, default_value = "normal")]
    dist: String,
    /// Shape for t (degrees of freedom) or ged
    #[arg(long)]
    shape: Option<f64>,
    /// Observations to keep after the warm-up
    #[arg(long)]
    n_obs: usize,
    /// Warm-up steps discarded before the kept window
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    burn_in: usize,
    /// RNG seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Return series CSV the model was fitted on
    #[arg(long)]
    input: PathBuf,
    /// Fit JSON produced by `fit` or `search`
    #[arg(long)]
    fit: PathBuf,
    /// Comma-separated sweep exponents
    #[arg(long)]
    k_list: Option<String>,
    /// Largest sweep lag; defaults to a tenth of the sample
    #[arg(long)]
    max_lag: Option<usize>,
    /// Calendar fixing intervals per day for the periodicity profile;
    /// without it the series is treated as one interval per day
    #[arg(long)]
    calendar: Option<String>,
    /// Bar width in minutes used with --calendar
    #[arg(long, default_value_t = 5)]
    bar_minutes: u32,
    #[command(flatten)]
    out: OutArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(cli.command))) {
        Ok(Ok(code)) => ExitCode::from(code),
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => {
            eprintln!("error: internal fault");
            ExitCode::from(EXIT_INTERNAL)
        }
    }
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Acf(args) => cmd_acf(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Search(args) => cmd_search(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Diagnose(args) => cmd_diagnose(args),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) | Error::InvalidParameter(_) => EXIT_USAGE,
        Error::NonPositivePrice { .. }
        | Error::InvalidSeries(_)
        | Error::DegenerateSeries(_)
        | Error::LagRange { .. }
        | Error::InsufficientData(_)
        | Error::InvalidCalendar(_)
        | Error::BadHeader(_)
        | Error::EmptyInput(_)
        | Error::Format(_)
        | Error::Io(_) => EXIT_DATA,
        Error::RankDeficient { .. } | Error::AllFitsFailed(_) => EXIT_NO_CONVERGE,
        Error::NumericFailure { .. } => EXIT_INTERNAL,
    }
}

/// Record of one run, written beside its outputs. Output names are relative
/// so a moved directory stays self-describing; the output directory itself
/// is deliberately not recorded, keeping reruns into fresh directories
/// byte-identical.
#[derive(Serialize)]
struct Manifest {
    command: &'static str,
    tool_version: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    inputs: BTreeMap<&'static str, String>,
    config: serde_json::Value,
    outputs: Vec<&'static str>,
}

impl Manifest {
    fn new(command: &'static str) -> Self {
        Self {
            command,
            tool_version: env!("CARGO_PKG_VERSION"),
            seed: None,
            inputs: BTreeMap::new(),
            config: serde_json::Value::Null,
            outputs: Vec::new(),
        }
    }

    fn input(&mut self, name: &'static str, path: &Path) {
        self.inputs.insert(name, path.display().to_string());
    }
}

/// Write every output then the manifest naming them. Callers finish all
/// fallible computation first so a failed run leaves no files behind.
fn write_outputs(dir: &Path, mut manifest: Manifest, files: &[(&'static str, String)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, contents) in files {
        fs::write(dir.join(name), contents)?;
        manifest.outputs.push(name);
    }
    let json = to_json_pretty(&manifest)?;
    fs::write(dir.join(format!("{}-manifest.json", manifest.command)), json)?;
    Ok(())
}

fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Error::Format(e.to_string()))
}

fn load_returns(path: &Path) -> Result<ReturnSeries> {
    ReturnSeries::from_csv(&fs::read_to_string(path)?)
}

fn load_calendar(spec: &str) -> Result<TradingCalendar> {
    match TradingCalendar::bundled(spec) {
        Some(c) => Ok(c),
        None => TradingCalendar::from_config_file(spec),
    }
}

fn parse_dist(name: &str, shape: Option<f64>) -> Result<DistSpec> {
    match name.trim().to_ascii_lowercase().as_str() {
        "normal" | "gaussian" => Ok(DistSpec::normal()),
        "t" | "student_t" | "student-t" => DistSpec::student_t(shape.unwrap_or(8.0)),
        "ged" => DistSpec::ged(shape.unwrap_or(1.5)),
        other => Err(Error::InvalidConfig(format!(
            "unknown distribution '{other}' (expected normal, t or ged)"
        ))),
    }
}

fn parse_k_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|part| {
            let part = part.trim();
            part.parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("bad exponent '{part}' in k-list")))
        })
        .collect()
}

fn optimizer_config(n_starts: usize, max_iterations: usize) -> OptimizerConfig {
    OptimizerConfig {
        n_starts,
        max_iterations,
        ..OptimizerConfig::default()
    }
}

fn order_of(result: &FitResult) -> ModelOrder {
    ModelOrder::new(
        result.params.alpha.len(),
        result.params.beta.len(),
        result.params.ar.len(),
        result.params.ma.len(),
    )
}

fn cmd_ingest(args: IngestArgs) -> Result<u8> {
    let format = match &args.format {
        Some(path) => TickFormat::from_json(&fs::read_to_string(path)?)?,
        None => TickFormat::default(),
    };
    let calendar = load_calendar(&args.calendar)?;
    let mut config = IngestConfig::new(calendar);
    config.bar_minutes = args.bar_minutes;
    let file = fs::File::open(&args.input)?;
    let out = ingest(BufReader::new(file), &format, &config)?;
    let report = to_json_pretty(&out.report)?;

    let mut manifest = Manifest::new("ingest");
    manifest.input("input", &args.input);
    if let Some(f) = &args.format {
        manifest.input("format", f);
    }
    manifest.inputs.insert("calendar", args.calendar.clone());
    manifest.config = json!({
        "bar_minutes": args.bar_minutes,
        "intervals_per_day": out.bars.intervals_per_day(),
        "contract_id": out.bars.contract_id(),
    });
    write_outputs(
        &args.out.output_dir,
        manifest,
        &[
            ("bars.csv", out.bars.to_csv()),
            ("returns.csv", out.returns.to_csv()),
            ("ingest-report.json", report),
        ],
    )?;
    Ok(0)
}

fn cmd_acf(args: AcfArgs) -> Result<u8> {
    let returns = load_returns(&args.input)?;
    let max_lag = args.max_lag.unwrap_or_else(|| default_max_lag(returns.len()));
    let result = acf(&returns, max_lag)?;
    let band = result.band();
    let mut csv = String::from("lag,rho,band\n");
    for (i, rho) in result.rho().iter().enumerate() {
        csv.push_str(&format!("{},{rho},{band}\n", i + 1));
    }

    let mut manifest = Manifest::new("acf");
    manifest.input("input", &args.input);
    manifest.config = json!({ "max_lag": max_lag, "n": returns.len(), "band": band });
    write_outputs(&args.out.output_dir, manifest, &[("acf.csv", csv)])?;
    Ok(0)
}

fn cmd_sweep(args: SweepArgs) -> Result<u8> {
    let returns = load_returns(&args.input)?;
    let ks = match &args.k_list {
        Some(text) => parse_k_list(text)?,
        None => DEFAULT_SWEEP_KS.to_vec(),
    };
    let max_lag = args.max_lag.unwrap_or_else(|| default_max_lag(returns.len()));
    let label = args
        .input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "series".into());
    let table = power_sweep(&returns, &ks, max_lag)?.with_label(label);
    let table_json = to_json_pretty(&table)?;

    let mut manifest = Manifest::new("sweep");
    manifest.input("input", &args.input);
    manifest.config = json!({ "k_list": ks, "max_lag": max_lag, "n": returns.len() });
    write_outputs(
        &args.out.output_dir,
        manifest,
        &[("sweep.csv", table.to_csv()), ("sweep.json", table_json)],
    )?;
    Ok(0)
}

fn cmd_fit(args: FitArgs) -> Result<u8> {
    let returns = load_returns(&args.input)?;
    let order: ModelOrder = args.order.parse()?;
    let dist = parse_dist(&args.dist, args.shape)?;
    let config = optimizer_config(args.starts, args.max_iterations);
    let result = fit(&returns, order, dist, &config)?;
    let result_json = to_json_pretty(&result)?;

    let mut manifest = Manifest::new("fit");
    manifest.input("input", &args.input);
    manifest.config = json!({
        "order": order.to_string(),
        "dist": dist,
        "n_starts": args.starts,
        "max_iterations": args.max_iterations,
        "converged": result.converged,
    });
    write_outputs(
        &args.out.output_dir,
        manifest,
        &[
            ("fit.json", result_json),
            ("fit-report.txt", result.text_report()),
        ],
    )?;
    Ok(if result.converged { 0 } else { EXIT_NO_CONVERGE })
}

/// One row of the `search` ranking summary.
#[derive(Serialize)]
struct SearchEntry {
    rank: usize,
    order: String,
    dist: DistSpec,
    converged: bool,
    loglik: f64,
    k_params: usize,
    aic_total: f64,
    bic_total: f64,
    iterations: usize,
}

fn cmd_search(args: SearchArgs) -> Result<u8> {
    let returns = load_returns(&args.input)?;
    let orders = args
        .order
        .split(';')
        .map(|s| s.trim().parse::<ModelOrder>())
        .collect::<Result<Vec<_>>>()?;
    let dists = args
        .dist
        .split(',')
        .map(|s| parse_dist(s, args.shape))
        .collect::<Result<Vec<_>>>()?;
    let config = optimizer_config(args.starts, args.max_iterations);
    let ranked = model_search(&returns, &orders, &dists, &config)?;
    let entries: Vec<SearchEntry> = ranked
        .iter()
        .enumerate()
        .map(|(i, r)| SearchEntry {
            rank: i + 1,
            order: order_of(r).to_string(),
            dist: r.dist,
            converged: r.converged,
            loglik: r.loglik,
            k_params: r.k_params,
            aic_total: r.aic_total,
            bic_total: r.bic_total,
            iterations: r.iterations,
        })
        .collect();
    let ranking_json = to_json_pretty(&entries)?;
    let best = &ranked[0];
    let best_json = to_json_pretty(best)?;

    let mut manifest = Manifest::new("search");
    manifest.input("input", &args.input);
    manifest.config = json!({
        "orders": orders.iter().map(ToString::to_string).collect::<Vec<_>>(),
        "dists": dists,
        "n_starts": args.starts,
        "max_iterations": args.max_iterations,
        "n_fits": ranked.len(),
    });
    write_outputs(
        &args.out.output_dir,
        manifest,
        &[
            ("search.json", ranking_json),
            ("search-best.json", best_json),
            ("search-report.txt", best.text_report()),
        ],
    )?;
    Ok(if best.converged { 0 } else { EXIT_NO_CONVERGE })
}

fn cmd_simulate(args: SimulateArgs) -> Result<u8> {
    let params: AparchParams = serde_json::from_str(&fs::read_to_string(&args.params)?)
        .map_err(|e| Error::Format(format!("parameter file: {e}")))?;
    let dist = parse_dist(&args.dist, args.shape)?;
    let series = simulate(&params, dist, args.n_obs, args.seed, args.burn_in)?;

    let mut manifest = Manifest::new("simulate");
    manifest.seed = Some(args.seed);
    manifest.input("params", &args.params);
    manifest.config = json!({
        "params": params,
        "dist": dist,
        "n_obs": args.n_obs,
        "burn_in": args.burn_in,
    });
    write_outputs(
        &args.out.output_dir,
        manifest,
        &[("simulated-returns.csv", series.to_csv())],
    )?;
    Ok(0)
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<u8> {
    let mut returns = load_returns(&args.input)?;
    if let Some(spec) = &args.calendar {
        let calendar = load_calendar(spec)?;
        returns = returns.with_intervals_per_day(calendar.intervals_per_day(args.bar_minutes)?)?;
    }
    let fitted = FitResult::from_json(&fs::read_to_string(&args.fit)?)?;
    let residuals = standardized_residuals(&returns, &fitted)?;

    let ks = match &args.k_list {
        Some(text) => parse_k_list(text)?,
        None => DEFAULT_SWEEP_KS.to_vec(),
    };
    let max_lag = args.max_lag.unwrap_or_else(|| default_max_lag(residuals.len()));
    let table = power_sweep(&residuals, &ks, max_lag)?.with_label("residuals");
    let table_json = to_json_pretty(&table)?;

    // Periodicity of the absolute residuals over up to the default horizon,
    // clipped to what the sample supports.
    let ipd = residuals.intervals_per_day();
    let days = DEFAULT_PROFILE_DAYS.min(residuals.len().saturating_sub(1) as u32 / ipd);
    let absolute = power_transform(&residuals, PowerTransform::absolute(1.0)?);
    let profile_acf = acf(&absolute, (ipd * days) as usize)?;
    let profile = periodicity_profile(&profile_acf, ipd, days)?;

    let mut manifest = Manifest::new("diagnose");
    manifest.input("input", &args.input);
    manifest.input("fit", &args.fit);
    if let Some(spec) = &args.calendar {
        manifest.inputs.insert("calendar", spec.clone());
    }
    manifest.config = json!({
        "k_list": ks,
        "max_lag": max_lag,
        "intervals_per_day": ipd,
        "profile_days": days,
        "n": residuals.len(),
    });
    write_outputs(
        &args.out.output_dir,
        manifest,
        &[
            ("residuals.csv", residuals.to_csv()),
            ("residual-sweep.csv", table.to_csv()),
            ("residual-sweep.json", table_json),
            ("periodicity.csv", profile.to_csv()),
        ],
    )?;
    Ok(0)
}
