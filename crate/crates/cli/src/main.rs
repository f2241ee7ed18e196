mod files;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use drsf_core::dro::{read_samples_csv, solve_bounds, write_samples_csv, SampleKind, WassersteinBall};
use drsf_core::filter::{filter_action, filter_or_fallback, DrsfConfig, FilterBounds, FilterResult};
use drsf_core::grid::Network;
use drsf_core::sim::{
    epsilon_sweep, experiment_samples, run_experiment, Controller, EpisodeConfig, Observation,
    RandomController,
};
use serde::Serialize;

use files::{usage, Pending, UsageError};

/// Distributionally robust safety filter for reactive-power control.
///
/// Set RUST_LOG to change the log level (default `info`, on stderr).
#[derive(Parser, Debug)]
#[command(name = "drsf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw model-error samples and write one CSV per constraint class.
    Samples(SamplesArgs),
    /// Certify robust bounds from sample CSVs.
    Bounds(BoundsArgs),
    /// Filter one proposed action.
    Filter(FilterArgs),
    /// Run closed-loop episodes.
    Simulate(SimulateArgs),
    /// Compare violation rates over a grid of ambiguity radii.
    Sweep(SweepArgs),
    /// Time repeated filter solves on random proposals.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct NetworkArg {
    /// Feeder as `bus.csv,line.csv`; the bundled 33-bus feeder by default.
    #[arg(long)]
    network: Option<String>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Episode configuration (JSON, or TOML with a .toml extension).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Relative standard deviation of the line-parameter error.
    #[arg(long)]
    sigma: Option<f64>,
    /// Number of error samples behind the bounds.
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<EpisodeConfig> {
        let mut cfg = files::config(self.config.as_deref())?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.sigma {
            cfg.sigma = s;
        }
        if let Some(n) = self.n_samples {
            cfg.bounds.n_samples = n;
        }
        if let Some(a) = self.alpha {
            cfg.bounds.alpha = a;
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct SamplesArgs {
    #[command(flatten)]
    network: NetworkArg,
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Output directory for voltage.csv, current.csv and substation.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BoundsArgs {
    /// Sample CSV; repeat once per constraint class.
    #[arg(long, required = true)]
    samples: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    /// JSON output keyed by class; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OperatingState {
    /// Multiplier on every load.
    #[arg(long)]
    load: Option<f64>,
    /// Multiplier on every PV unit's real output, in [0, 1].
    #[arg(long)]
    pv: Option<f64>,
}

impl OperatingState {
    fn apply(&self, net: Network) -> Result<Network> {
        if self.load.is_none() && self.pv.is_none() {
            return Ok(net);
        }
        let load = self.load.unwrap_or(1.0);
        let pv = self.pv.unwrap_or(1.0);
        if !(load.is_finite() && load >= 0.0 && (0.0..=1.0).contains(&pv)) {
            return Err(usage(format!(
                "--load must be >= 0 and --pv in [0, 1], got {load} and {pv}"
            )));
        }
        Ok(net.scaled(load, pv))
    }
}

#[derive(Args, Debug)]
struct FilterSettings {
    /// Bounds JSON with all three classes, as written by `bounds`; the
    /// nominal limits apply when absent.
    #[arg(long)]
    bounds: Option<PathBuf>,
    /// Weight of the line currents in the filter objective.
    #[arg(long)]
    omega: Option<f64>,
    /// Fail instead of falling back when the robust set is empty.
    #[arg(long)]
    strict: bool,
}

impl FilterSettings {
    fn resolve(&self, net: &Network) -> Result<DrsfConfig> {
        let bounds = match &self.bounds {
            Some(p) => files::read_structured::<FilterBounds>(p)?,
            None => FilterBounds::zero(net),
        };
        bounds
            .check(net)
            .map_err(|e| usage(format!("--bounds: {e}")))?;
        let mut cfg = DrsfConfig::with_bounds(bounds);
        if let Some(w) = self.omega {
            cfg.omega = w;
        }
        Ok(cfg)
    }

    fn run(&self, net: &Network, q: &[f64], cfg: &DrsfConfig) -> Result<FilterResult> {
        Ok(if self.strict {
            filter_action(net, q, cfg)?
        } else {
            filter_or_fallback(net, q, cfg)?
        })
    }
}

#[derive(Args, Debug)]
struct FilterArgs {
    #[command(flatten)]
    network: NetworkArg,
    #[command(flatten)]
    state: OperatingState,
    #[command(flatten)]
    filter: FilterSettings,
    /// Proposed setpoints (p.u.): a JSON array, inline or in a file.
    #[arg(long)]
    action: String,
    /// Result JSON; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    network: NetworkArg,
    #[command(flatten)]
    experiment: ExperimentArgs,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    scenarios: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Apply the proposals unfiltered.
    #[arg(long)]
    no_filter: bool,
    /// Threads for scenario-level parallelism.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Full report JSON; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-step CSV over all scenarios.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    network: NetworkArg,
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Comma-separated ambiguity radii.
    #[arg(long, value_delimiter = ',', required = true)]
    epsilons: Vec<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    scenarios: Option<usize>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    network: NetworkArg,
    #[command(flatten)]
    state: OperatingState,
    #[command(flatten)]
    filter: FilterSettings,
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Timing JSON; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Logs the filter settings; the bounds themselves are long and come from
/// a file the user already has.
fn log_filter(cfg: &DrsfConfig, settings: &FilterSettings) {
    let shown = DrsfConfig {
        bounds: None,
        ..cfg.clone()
    };
    log_config("filter", &shown);
    match &settings.bounds {
        Some(p) => log::info!("bounds: {}", p.display()),
        None => log::info!("bounds: none (nominal limits)"),
    }
}

fn log_config<T: Serialize>(what: &str, value: &T) {
    match serde_json::to_string(value) {
        Ok(s) => log::info!("{what}: {s}"),
        Err(e) => log::warn!("{what}: not serializable ({e})"),
    }
}

/// Config validation failures are the caller's fault, not the model's.
fn validated(cfg: EpisodeConfig) -> Result<EpisodeConfig> {
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if cfg.filter_on && cfg.bounds.n_samples == 0 {
        return Err(usage("n_samples must be at least 1 with the filter on"));
    }
    log_config("config", &cfg);
    log::info!("seed: {}", cfg.seed);
    Ok(cfg)
}

fn samples(args: SamplesArgs) -> Result<Vec<Pending>> {
    let net = files::network(args.network.network.as_deref())?;
    let cfg = validated(args.experiment.resolve()?)?;
    let s = experiment_samples(&cfg, &net)?;
    log::info!("drew {} samples", s.len());
    SampleKind::all()
        .into_iter()
        .map(|kind| {
            let path = args.out.join(format!("{}.csv", kind_name(kind)));
            let mut bytes = Vec::new();
            write_samples_csv(s.get(kind), &mut bytes)?;
            Pending::render(Some(path), |out| {
                out.extend(bytes);
                Ok(())
            })
        })
        .collect()
}

fn kind_name(kind: SampleKind) -> &'static str {
    match kind {
        SampleKind::Voltage => "voltage",
        SampleKind::Current => "current",
        SampleKind::Substation => "substation",
    }
}

fn bounds(args: BoundsArgs) -> Result<Vec<Pending>> {
    let ball = WassersteinBall::new(args.epsilon, args.alpha).map_err(|e| usage(e.to_string()))?;
    log_config("ambiguity set", &ball);
    let mut out = serde_json::Map::new();
    for path in &args.samples {
        let file = std::fs::File::open(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let set = read_samples_csv(file).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let name = kind_name(set.kind());
        if out.contains_key(name) {
            return Err(usage(format!("more than one {name} sample file")));
        }
        let b = solve_bounds(&set, &ball).with_context(|| path.display().to_string())?;
        log::info!("{name}: certified probability {:.4}", b.certified_prob);
        out.insert(name.into(), serde_json::to_value(b)?);
    }
    Ok(vec![Pending::json(args.out, &out)?])
}

fn filter(args: FilterArgs) -> Result<Vec<Pending>> {
    let net = args.state.apply(files::network(args.network.network.as_deref())?)?;
    let cfg = args.filter.resolve(&net)?;
    let q = files::action(&args.action)?;
    if q.len() != net.n_pv() {
        return Err(usage(format!(
            "--action has {} values for {} PV units",
            q.len(),
            net.n_pv()
        )));
    }
    log_filter(&cfg, &args.filter);
    let res = args.filter.run(&net, &q, &cfg)?;
    log::info!(
        "deviation {:.3e}, exactness gap {:.1e}{}",
        res.deviation,
        res.exactness_gap,
        if res.fallback { ", fallback" } else { "" }
    );
    Ok(vec![Pending::json(args.out, &res)?])
}

fn simulate(args: SimulateArgs) -> Result<Vec<Pending>> {
    let net = files::network(args.network.network.as_deref())?;
    let mut cfg = args.experiment.resolve()?;
    if let Some(h) = args.horizon {
        cfg.horizon = h;
    }
    if let Some(n) = args.scenarios {
        cfg.n_scenarios = n;
    }
    if let Some(e) = args.epsilon {
        cfg.bounds.epsilon = e;
    }
    if args.no_filter {
        cfg.filter_on = false;
    }
    let cfg = validated(cfg)?;
    let exp = run_experiment(&cfg, &net, args.jobs.max(1))?;
    log_config("summary", &exp.summary);
    let mut out = vec![Pending::json(args.out, &exp)?];
    if let Some(path) = args.csv {
        out.push(Pending::render(Some(path), |w| exp.write_csv(w))?);
    }
    Ok(out)
}

const SWEEP_HEADER: &str = "epsilon,voltage_violation_probability,voltage_violation_steps,steps,fallback_steps,mean_deviation,mean_voltage_width";

fn sweep(args: SweepArgs) -> Result<Vec<Pending>> {
    use std::io::Write;
    let net = files::network(args.network.network.as_deref())?;
    let mut cfg = args.experiment.resolve()?;
    if let Some(h) = args.horizon {
        cfg.horizon = h;
    }
    if let Some(n) = args.scenarios {
        cfg.n_scenarios = n;
    }
    cfg.filter_on = true;
    for &e in &args.epsilons {
        WassersteinBall::new(e, cfg.bounds.alpha).map_err(|err| usage(err.to_string()))?;
    }
    let cfg = validated(cfg)?;
    let points = epsilon_sweep(&cfg, &net, &args.epsilons, args.jobs.max(1))?;
    Ok(vec![Pending::render(args.out, |w| {
        writeln!(w, "{SWEEP_HEADER}")?;
        for p in &points {
            let s = &p.summary;
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                p.epsilon,
                s.voltage_violation_probability,
                s.voltage_violation_steps,
                s.steps,
                s.fallback_steps,
                s.mean_deviation,
                p.mean_voltage_width
            )?;
        }
        Ok(())
    })?])
}

#[derive(Serialize)]
struct BenchReport {
    repeats: usize,
    seed: u64,
    mean_ms: f64,
    max_ms: f64,
    wall_ms: f64,
    max_exactness_gap: f64,
    fallbacks: usize,
    results: Vec<FilterResult>,
}

fn bench(args: BenchArgs) -> Result<Vec<Pending>> {
    let net = args.state.apply(files::network(args.network.network.as_deref())?)?;
    let cfg = args.filter.resolve(&net)?;
    if args.repeats == 0 {
        return Err(usage("--repeats must be at least 1"));
    }
    log_filter(&cfg, &args.filter);
    log::info!("seed: {}", args.seed);
    let obs = Observation {
        step: 0,
        v: vec![1.0; net.n_buses()],
        loss: 0.0,
        pv_bus: net.pv_units().iter().map(|u| u.bus).collect(),
        q_max: net.pv_units().iter().map(|u| u.q_max()).collect(),
        q_prev: net.q_setpoints(),
    };
    let mut proposals = RandomController::new(args.seed);
    let start = Instant::now();
    let mut results = Vec::with_capacity(args.repeats);
    for _ in 0..args.repeats {
        let q = proposals.act(&obs)?;
        results.push(args.filter.run(&net, &q, &cfg)?);
    }
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let ms: Vec<f64> = results.iter().map(|r| r.solve_time * 1e3).collect();
    let report = BenchReport {
        repeats: args.repeats,
        seed: args.seed,
        mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
        max_ms: ms.iter().copied().fold(0.0, f64::max),
        wall_ms,
        max_exactness_gap: results.iter().map(|r| r.exactness_gap).fold(0.0, f64::max),
        fallbacks: results.iter().filter(|r| r.fallback).count(),
        results,
    };
    log::info!("mean {:.2} ms, max {:.2} ms", report.mean_ms, report.max_ms);
    Ok(vec![Pending::json(args.out, &report)?])
}

fn run(cli: Cli) -> Result<()> {
    let outputs = match cli.command {
        Command::Samples(a) => samples(a),
        Command::Bounds(a) => bounds(a),
        Command::Filter(a) => filter(a),
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::Bench(a) => bench(a),
    }?;
    files::commit(outputs)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
