mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mgtrade::error::ErrorKind;
use mgtrade::sim::{self, experiments};
use mgtrade::{Error, Result};

use crate::config::{one_line, RunConfig};

const ENV_OUT: &str = "MGTRADE_OUT";
const ENV_THREADS: &str = "MGTRADE_THREADS";

/// Peer-to-peer microgrid trading simulator.
///
/// Without `--preset` the config is simulated once and trace.csv, metrics.json,
/// equilibria.csv and timing.json are written to the output directory. With a preset the
/// matching experiment matrix runs instead and `<preset>.csv` is written.
#[derive(Debug, Parser)]
#[command(name = "mgtrade", version)]
struct Cli {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Overrides MGTRADE_OUT and the config's out_dir.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides MGTRADE_THREADS and the config's threads.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// One of case-compare, assa-vs-fixed, da-dimension-sweep, strategy-compare, phi-sweep, delay-stress.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Record the per-iteration price path in equilibria.csv.
    #[arg(long)]
    verbose_trace: bool,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Solver => 4,
        ErrorKind::Invariant => 5,
    }
}

fn kind_name(kind: ErrorKind) -> &'static str {
    match kind {
        ErrorKind::Config => "config",
        ErrorKind::Data => "data",
        ErrorKind::Solver => "solver",
        ErrorKind::Invariant => "invariant",
    }
}

fn env_override<T: std::str::FromStr>(name: &str) -> Result<Option<T>> {
    match std::env::var(name) {
        Ok(v) if !v.is_empty() => v.parse().map(Some).map_err(|_| Error::Config(format!("{name}: cannot parse {v:?}"))),
        _ => Ok(None),
    }
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::parse("", std::path::Path::new("."))?,
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(out) = cli.out.clone().or(env_override(ENV_OUT)?) {
        cfg.out_dir = out;
    }
    if let Some(n) = cli.threads.or(env_override(ENV_THREADS)?) {
        cfg.threads = Some(n);
    }
    if cli.verbose_trace {
        cfg.flags.verbose_trace = true;
    }
    if cli.preset.is_some() {
        cfg.experiment.preset = cli.preset.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(cfg: &RunConfig) -> Result<()> {
    let (inputs, sim_cfg) = cfg.build()?;
    let report = sim::run_horizon(&inputs, &sim_cfg)?;
    sim::check_invariants(&report)?;
    sim::write_report(&report, &cfg.out_dir)?;
    let m = &report.metrics;
    log::info!(
        "{} intervals: self-sufficiency {:.2}%, reverse flow {:.2}%, avg cost {:.2}, mean iterations {:.2}",
        m.intervals,
        m.self_sufficiency_pct,
        m.reverse_flow_pct,
        m.avg_mg_cost,
        m.mean_iterations
    );
    Ok(())
}

fn cmd_experiment(cfg: &RunConfig, preset: &str) -> Result<()> {
    if !experiments::PRESETS.contains(&preset) {
        return Err(Error::Config(format!("unknown preset {preset:?}; expected one of {}", experiments::PRESETS.join(", "))));
    }
    let table = experiments::run_preset(preset, &cfg.experiment_options())?;
    table.write(&cfg.out_dir)?;
    log::info!("wrote {}", cfg.out_dir.join(format!("{preset}.csv")).display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    if let Some(n) = cfg.threads {
        // Only fails if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cfg.experiment.preset {
        Some(p) => cmd_experiment(&cfg, p),
        None => cmd_run(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.kind();
            let line = serde_json::json!({ "error": kind_name(kind), "reason": one_line(&e.to_string()) });
            eprintln!("{line}");
            ExitCode::from(exit_code(kind))
        }
    }
}
