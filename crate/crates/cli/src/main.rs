//! `tiersim`: simulate, analyze, fit and generate traces for a two-tier
//! storage system.

mod config;
mod manifest;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tierstore::device::{
    fit, load_paper_model, read_training, Device, DeviceError, DeviceModel, ModelTermSet,
};
use tierstore::queueing::{
    analyze_separate_queues, example_walkthrough, ProcessCounts, QueueNetworkParams,
};
use tierstore::sim::{self, compare_to_analytic, SimConfig, SimError, SimMetrics};
use tierstore::workload::{generate, write_trace, TrafficModel, TrafficSpec};

use manifest::{write_atomic, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "tiersim", version, about = "Two-tier storage simulator and analytic toolkit")]
struct Cli {
    /// TOML run configuration (must contain `version = 1`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Override a config key, e.g. `--set cache.n_lines=128`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Table,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the discrete-event simulation (or a cache-size sweep).
    Simulate(SimulateArgs),
    /// Evaluate the closed-form queueing model.
    Analyze(AnalyzeArgs),
    /// Fit a device performance model, or dump a published one.
    Fit(FitArgs),
    /// Write a synthetic request trace.
    GenTrace(GenTraceArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Sweep these cache sizes (lines, strictly increasing) instead of one run.
    #[arg(long, value_delimiter = ',')]
    sweep: Vec<usize>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Print the worked example instead of evaluating flags.
    #[arg(long, conflicts_with_all = ["lambda", "mu1", "mu2", "p12"])]
    paper_example: bool,
    /// Arrival rate, requests per second.
    #[arg(long)]
    lambda: Option<f64>,
    /// Tier-1 service rate per server.
    #[arg(long)]
    mu1: Option<f64>,
    /// Tier-2 service rate.
    #[arg(long)]
    mu2: Option<f64>,
    /// Miss rate.
    #[arg(long)]
    p12: Option<f64>,
    /// Tier-1 servers.
    #[arg(long, default_value_t = 1)]
    servers: usize,
    /// Total read requests, for the service-time bounds.
    #[arg(long)]
    requests: Option<f64>,
    /// Processes sharing the requests evenly.
    #[arg(long, default_value_t = 1)]
    processes: usize,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Print the published model for a device without fitting.
    #[arg(long, value_name = "DEVICE", conflicts_with_all = ["training", "terms"])]
    paper_coefficients: Option<Device>,
    /// Training CSV with header `x1,x2,x3,x4,x5,y_seconds`.
    #[arg(long, requires = "device")]
    training: Option<PathBuf>,
    /// Device the model describes.
    #[arg(long)]
    device: Option<Device>,
    /// Term formula, e.g. `x1*x3 + x5`; defaults to the device family's.
    #[arg(long)]
    terms: Option<String>,
}

#[derive(Debug, Args)]
struct GenTraceArgs {
    /// Output trace CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, conflicts_with_all = ["poisson", "irm"])]
    model: Option<ModelArg>,
    /// Shorthand for `--model poisson`.
    #[arg(long, conflicts_with = "irm")]
    poisson: bool,
    /// Shorthand for `--model irm`.
    #[arg(long)]
    irm: bool,
    /// Number of requests.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    pages: Option<u64>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    read_fraction: Option<f64>,
    #[arg(long)]
    page_size: Option<u64>,
    #[arg(long)]
    request_size: Option<u64>,
    /// IRM only.
    #[arg(long)]
    zipf_exponent: Option<f64>,
    /// IRM only.
    #[arg(long)]
    cap: Option<u64>,
    /// Poisson only, seconds.
    #[arg(long)]
    lifetime: Option<f64>,
    /// Poisson only, requests between page introductions.
    #[arg(long)]
    intro_interval: Option<u64>,
    #[arg(long)]
    file_id: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Poisson,
    Irm,
}

/// Failure classes mapped onto the exit-code contract.
#[derive(Debug)]
enum Failure {
    /// Bad configuration or input: exit 2.
    Config(anyhow::Error),
    /// Runtime or numerical failure: exit 3.
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        if e.is_config() {
            Failure::Config(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

impl From<DeviceError> for Failure {
    fn from(e: DeviceError) -> Self {
        match e {
            DeviceError::RankDeficient { .. }
            | DeviceError::Underdetermined { .. }
            | DeviceError::Fit(_) => Failure::Runtime(e.into()),
            _ => Failure::Config(e.into()),
        }
    }
}

trait Classify<T> {
    fn config_err(self) -> Result<T, Failure>;
    fn runtime_err(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config_err(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }
    fn runtime_err(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => cmd_simulate(&cli, args),
        Command::Analyze(args) => cmd_analyze(&cli, args),
        Command::Fit(args) => cmd_fit(&cli, args),
        Command::GenTrace(args) => cmd_gen_trace(&cli, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            let (Failure::Config(e) | Failure::Runtime(e)) = &failure;
            eprintln!("error: {e:#}");
            ExitCode::from(failure.code())
        }
    }
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, Failure> {
    let mut bytes = serde_json::to_vec_pretty(value).runtime_err()?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn emit(path: PathBuf, bytes: &[u8], manifest: &mut RunManifest) -> Result<(), Failure> {
    write_atomic(&path, bytes).runtime_err()?;
    manifest.outputs.push(path);
    Ok(())
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> Result<(), Failure> {
    let config = config::resolve(cli.config.as_deref(), &cli.overrides, cli.seed).config_err()?;
    let dir = out_dir(cli);
    let mut manifest = RunManifest::new(
        "simulate",
        Some(config.seed),
        serde_json::to_value(&config).runtime_err()?,
    );

    if !args.sweep.is_empty() {
        let points = sim::sweep_cache_size(&config, &args.sweep)?;
        match cli.format {
            Format::Csv => {
                let mut text = String::from("n_lines,miss_rate\n");
                for p in &points {
                    writeln!(text, "{},{:?}", p.n_lines, p.miss_rate).expect("string write");
                }
                emit(dir.join("sweep.csv"), text.as_bytes(), &mut manifest)?;
            }
            Format::Json | Format::Table => {
                emit(dir.join("sweep.json"), &json_bytes(&points)?, &mut manifest)?;
            }
        }
        if cli.format == Format::Table {
            println!("{:>8} {:>10}", "n_lines", "miss_rate");
            for p in &points {
                println!("{:>8} {:>10.4}", p.n_lines, p.miss_rate);
            }
        }
        return manifest.finish(&dir.join("manifest.json")).runtime_err();
    }

    let metrics = sim::run(&config)?;
    let comparison = comparison_params(&config)
        .ok()
        .and_then(|params| compare_to_analytic(&metrics, &params).ok());
    match cli.format {
        Format::Csv => {
            let mut summary = Vec::new();
            metrics.write_summary_csv(&mut summary).runtime_err()?;
            emit(dir.join("summary.csv"), &summary, &mut manifest)?;
            let mut series = Vec::new();
            metrics.write_timeseries_csv(&mut series).runtime_err()?;
            emit(dir.join("timeseries.csv"), &series, &mut manifest)?;
        }
        Format::Json | Format::Table => {
            emit(dir.join("metrics.json"), &json_bytes(&metrics)?, &mut manifest)?;
        }
    }
    if let Some(c) = &comparison {
        emit(dir.join("comparison.json"), &json_bytes(c)?, &mut manifest)?;
    }
    if cli.format == Format::Table {
        print!("{}", metrics_table(&metrics));
        if let Some(c) = &comparison {
            println!();
            println!(
                "measured p12={:.4}, arrival rate per process={:.3}/s, equilibrium={}",
                c.p12_measured, c.arrival_rate_measured, c.in_equilibrium
            );
            for row in &c.rows {
                println!(
                    "{:<14} sim={:<12.6} analytic={:<12.6} rel.err={}",
                    row.quantity,
                    row.simulated,
                    row.analytic,
                    row.relative_error.map_or("n/a".into(), |e| format!("{e:.4}"))
                );
            }
            println!(
                "completion bound T={:.4} s, observed completion={:.4} s",
                c.bound_completion, c.observed_completion
            );
        }
    }
    if metrics.queue_growth_detected {
        eprintln!("warning: tier-2 queue still growing at the horizon; the system is not in equilibrium");
    }
    manifest.finish(&dir.join("manifest.json")).runtime_err()
}

fn comparison_params(config: &SimConfig) -> Result<QueueNetworkParams, SimError> {
    Ok(QueueNetworkParams::new(
        config.traffic.arrival_rate,
        config.tier1.rate()?,
        config.tier2.rate()?,
        0.0,
        config.k_service_threads,
    ))
}

fn metrics_table(m: &SimMetrics) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:>7} {:>9} {:>9} {:>9} {:>9} {:>9} {:>10} {:>12} {:>12} {:>12}",
        "process", "requests", "hits", "misses", "prefetch", "evict", "writeback", "mean_resp_s", "max_resp_s", "throughput"
    )
    .expect("string write");
    for p in m.processes.iter().chain(std::iter::once(&m.aggregate)) {
        writeln!(
            out,
            "{:>7} {:>9} {:>9} {:>9} {:>9} {:>9} {:>10} {:>12.6} {:>12.6} {:>12.3}",
            p.process.map_or_else(|| "all".to_string(), |p| p.to_string()),
            p.requests,
            p.hits,
            p.misses,
            p.prefetch_hits,
            p.evictions,
            p.dirty_writebacks,
            p.mean_response,
            p.max_response,
            p.throughput
        )
        .expect("string write");
    }
    out
}

fn cmd_analyze(cli: &Cli, args: &AnalyzeArgs) -> Result<(), Failure> {
    let mut manifest = RunManifest::new("analyze", None, serde_json::Value::Null);
    let (text, json) = if args.paper_example {
        let w = example_walkthrough();
        (w.to_string(), json_bytes(&w)?)
    } else {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Failure::Config(anyhow!("missing --{name} (or use --paper-example)")))
        };
        let mut params = QueueNetworkParams::new(
            need(args.lambda, "lambda")?,
            need(args.mu1, "mu1")?,
            need(args.mu2, "mu2")?,
            need(args.p12, "p12")?,
            args.servers,
        );
        if let Some(total) = args.requests {
            if args.processes == 0 {
                return Err(Failure::Config(anyhow!("--processes must be at least 1")));
            }
            let per = total / args.processes as f64;
            params.counts = vec![
                ProcessCounts {
                    n_read: per,
                    n_write: 0.0,
                    n_miss: per * params.p12,
                };
                args.processes
            ];
        }
        let report = analyze_separate_queues(&params).config_err()?;
        manifest.config = serde_json::to_value(&params).runtime_err()?;
        (report.to_string(), json_bytes(&report)?)
    };
    match cli.format {
        Format::Json => print!("{}", String::from_utf8_lossy(&json)),
        Format::Table | Format::Csv => print!("{text}"),
    }
    if let Some(dir) = &cli.out_dir {
        emit(dir.join("analysis.json"), &json, &mut manifest)?;
        manifest.finish(&dir.join("manifest.json")).runtime_err()?;
    }
    Ok(())
}

fn model_table(model: &DeviceModel) -> String {
    let mut out = String::new();
    writeln!(out, "device: {} ({:?})", model.device.name(), model.provenance).expect("string write");
    writeln!(out, "{:<16} {:>14} {:>12} {:>10}", "term", "estimate", "std.error", "t value")
        .expect("string write");
    let labels =
        std::iter::once("(Intercept)".to_string()).chain(model.terms.labels());
    for (i, (label, coef)) in labels.zip(&model.coefficients).enumerate() {
        let (se, t) = model.fit.as_ref().map_or((None, None), |f| (f.std_errors[i], f.t_values[i]));
        let show = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4e}"));
        writeln!(out, "{label:<16} {coef:>14.6e} {:>12} {:>10}", show(se), show(t))
            .expect("string write");
    }
    if let Some(f) = &model.fit {
        writeln!(
            out,
            "R^2 = {:.6}, residual std. error = {:.4e} on {} df",
            f.r_squared, f.residual_std_error, f.df
        )
        .expect("string write");
    }
    out
}

fn cmd_fit(cli: &Cli, args: &FitArgs) -> Result<(), Failure> {
    let mut manifest = RunManifest::new("fit", None, serde_json::Value::Null);
    let model = if let Some(device) = args.paper_coefficients {
        load_paper_model(device)
    } else {
        let path = args
            .training
            .as_deref()
            .ok_or_else(|| Failure::Config(anyhow!("need --training and --device, or --paper-coefficients")))?;
        let device = args.device.expect("clap enforces --device with --training");
        let file = std::fs::File::open(path)
            .with_context(|| format!("cannot open training data `{}`", path.display()))
            .config_err()?;
        let samples = read_training(file)?;
        let formula = args
            .terms
            .clone()
            .unwrap_or_else(|| device.family().formula().to_string());
        let terms = ModelTermSet::from_formula(&formula)?;
        manifest.config = serde_json::json!({
            "training": path,
            "device": device,
            "terms": formula,
        });
        fit(device, &terms, &samples)?
    };
    let json = json_bytes(&model)?;
    match cli.format {
        Format::Json => print!("{}", String::from_utf8_lossy(&json)),
        Format::Table | Format::Csv => print!("{}", model_table(&model)),
    }
    let dir = out_dir(cli);
    emit(dir.join("model.json"), &json, &mut manifest)?;
    manifest.finish(&dir.join("manifest.json")).runtime_err()
}

fn traffic_spec(cli: &Cli, args: &GenTraceArgs) -> Result<TrafficSpec, Failure> {
    let base = config::resolve(cli.config.as_deref(), &cli.overrides, cli.seed).config_err()?;
    let mut spec = base.traffic;
    spec.seed = base.seed;
    let model = match (args.model, args.poisson, args.irm) {
        (Some(ModelArg::Poisson), ..) | (None, true, _) => Some(TrafficModel::Poisson),
        (Some(ModelArg::Irm), ..) | (None, _, true) => Some(TrafficModel::Irm),
        _ => None,
    };
    if let Some(model) = model {
        spec.model = model;
    }
    let conflict = |flag: &str, model: &str| {
        Failure::Config(anyhow!("--{flag} only applies to the {model} model"))
    };
    match spec.model {
        TrafficModel::Poisson => {
            if args.zipf_exponent.is_some() {
                return Err(conflict("zipf-exponent", "irm"));
            }
            if args.cap.is_some() {
                return Err(conflict("cap", "irm"));
            }
        }
        TrafficModel::Irm => {
            if args.lifetime.is_some() {
                return Err(conflict("lifetime", "poisson"));
            }
            if args.intro_interval.is_some() {
                return Err(conflict("intro-interval", "poisson"));
            }
        }
        TrafficModel::Trace => {
            return Err(Failure::Config(anyhow!(
                "gen-trace needs a synthetic model (poisson or irm)"
            )))
        }
    }
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = args.$flag { spec.$field = v; })*
        };
    }
    set!(n => n_requests, pages => n_pages, rate => arrival_rate, read_fraction => read_fraction,
         page_size => page_size, request_size => request_size, zipf_exponent => zipf_exponent,
         cap => popularity_cap, lifetime => mean_lifetime, file_id => file_id);
    if args.intro_interval.is_some() {
        spec.page_intro_interval = args.intro_interval;
    }
    spec.validate().config_err()?;
    Ok(spec)
}

fn cmd_gen_trace(cli: &Cli, args: &GenTraceArgs) -> Result<(), Failure> {
    let spec = traffic_spec(cli, args)?;
    let mut manifest = RunManifest::new(
        "gen-trace",
        Some(spec.seed),
        serde_json::to_value(&spec).runtime_err()?,
    );
    let requests = generate(&spec).runtime_err()?;
    let mut bytes = Vec::new();
    write_trace(&mut bytes, &requests).runtime_err()?;
    emit(args.out.clone(), &bytes, &mut manifest)?;
    manifest.finish(&manifest_beside(&args.out)).runtime_err()
}

/// `trace.csv` → `trace.csv.manifest.json`.
fn manifest_beside(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}
