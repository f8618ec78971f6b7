use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use robust_lanchester::commands::{
    cmd_aggregate, cmd_classic, cmd_optimize, cmd_simulate, cmd_sweep, write_classic_csv, write_paths_csv,
    write_sweep_csv,
};
use robust_lanchester::config::{parse_config, ScenarioConfig};
use robust_lanchester::error::{Error, FieldError};
use robust_lanchester::service::{serve, ServiceState, DEFAULT_GRID_POINTS};

/// Robust force allocation for stochastic Lanchester combat.
#[derive(Parser)]
#[command(name = "robust-lanchester", version)]
struct Cli {
    /// Scenario JSON; omitted fields take the reference defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the Monte Carlo path count.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Output file (stdout when omitted; for `simulate`, the path CSV).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Optimizer wall-clock budget in milliseconds.
    #[arg(long, global = true, env = "ROBUST_LANCHESTER_BUDGET_MS")]
    budget_ms: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate worst-case paths at the configured allocation.
    Simulate,
    /// Deterministic Lanchester and Bracken trajectories as CSV.
    Classic,
    /// Barycenter and worst-case model with KL diagnostics.
    Aggregate,
    /// Robust allocation search.
    Optimize,
    /// Objective on an even allocation grid as CSV.
    Sweep {
        #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
        grid_points: usize,
    },
    /// HTTP JSON API.
    Serve {
        #[arg(long, env = "ROBUST_LANCHESTER_BIND", default_value = "127.0.0.1:8080")]
        bind: String,
        /// Directory with the console bundle, served under `/`.
        #[arg(long, env = "ROBUST_LANCHESTER_STATIC_DIR")]
        static_dir: Option<PathBuf>,
    },
}

fn load(cli: &Cli) -> Result<ScenarioConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => parse_config(&std::fs::read_to_string(path)?)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(paths) = cli.paths {
        config.paths = paths;
    }
    if let Some(ms) = cli.budget_ms {
        config.optimizer.budget_ms = Some(ms);
    }
    config.validate()?;
    Ok(config)
}

fn output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), Error> {
    serde_json::to_writer_pretty(&mut *out, value).map_err(|e| Error::Parse(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    let config = load(&cli)?;
    let out = cli.out.as_deref();
    match cli.command {
        Command::Simulate => {
            let (result, paths) = cmd_simulate(&config)?;
            if let Some(path) = out {
                let mut w = output(Some(path))?;
                write_paths_csv(&mut w, &paths)?;
                w.flush()?;
            }
            let mut w = output(None)?;
            write_json(&mut w, &result)?;
            w.flush()?;
        }
        Command::Classic => {
            let mut w = output(out)?;
            write_classic_csv(&mut w, &cmd_classic(&config)?)?;
            w.flush()?;
        }
        Command::Aggregate => {
            let mut w = output(out)?;
            write_json(&mut w, &cmd_aggregate(&config)?)?;
            w.flush()?;
        }
        Command::Optimize => {
            let mut w = output(out)?;
            write_json(&mut w, &cmd_optimize(&config)?)?;
            w.flush()?;
        }
        Command::Sweep { grid_points } => {
            let result = cmd_sweep(&config, grid_points)?;
            let mut w = output(out)?;
            write_sweep_csv(&mut w, &result.points)?;
            w.flush()?;
        }
        Command::Serve { bind, static_dir } => {
            let state = ServiceState {
                defaults: config,
                budget_ms: cli.budget_ms,
                static_dir,
            };
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(serve(state, &bind))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, errors) = match e {
                Error::Config(errors) => (2, errors),
                Error::EnumerationTooLarge { .. } | Error::Unsupported(_) => (3, vec![FieldError::new("scenario", e.to_string())]),
                other => (1, vec![FieldError::new("error", other.to_string())]),
            };
            for err in errors {
                eprintln!("error: {err}");
            }
            ExitCode::from(code)
        }
    }
}
