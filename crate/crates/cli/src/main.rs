mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use serde_json::json;

use commands::{CommandRegistry, Report};
use config::{require, RunConfig};
use error::{CliError, CliResult};

/// Batch runner for phase-field cell problems and homogenisation sweeps.
#[derive(Debug, Parser)]
#[command(name = "atcell", version)]
struct Args {
    /// JSON run configuration.
    config: PathBuf,
    /// Output prefix (overrides `out` in the config).
    #[arg(long)]
    out: Option<String>,
    /// Maximum number of concurrent solves.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    verbose: bool,
}

fn write_outputs(prefix: &str, report: &Report, cfg: &RunConfig, wall: f64) -> CliResult<()> {
    let mut w = csv::Writer::from_path(format!("{prefix}.csv"))?;
    w.write_record(&report.header)?;
    for row in &report.rows {
        w.write_record(row)?;
    }
    w.flush()?;
    let summary = json!({
        "command": cfg.command,
        "version": env!("CARGO_PKG_VERSION"),
        "wall_time": wall,
        "config": cfg,
        "result": report.summary,
    });
    let text =
        serde_json::to_string_pretty(&summary).map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::write(format!("{prefix}.summary.json"), text)?;
    Ok(())
}

fn run(args: &Args) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let cfg = RunConfig::parse(&text)?;
    let registry = CommandRegistry::builtin();
    let name = require(&cfg.command, "command")?;
    let command = registry.get(name)?;
    let prefix = args
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| name.clone());
    let job = command.prepare(&cfg)?;
    if let Some(k) = args.jobs {
        if k == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let start = Instant::now();
    let report = pool.install(|| job.run())?;
    let wall = start.elapsed().as_secs_f64();
    write_outputs(&prefix, &report, &cfg, wall)?;
    log::info!("wrote {prefix}.csv and {prefix}.summary.json in {wall:.2} s");
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let level = if args.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
