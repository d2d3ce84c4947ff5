use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedmom::harness::{
    cmd_resume, cmd_run, cmd_sweep, cmd_validate, exit_code, parse_config, RunOptions, Scope,
};
use fedmom::Error;

/// Federated optimization simulator.
#[derive(Parser)]
#[command(name = "fedmom", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a TOML config.
    Run { config: PathBuf },
    /// Run one experiment per value of a config key.
    Sweep {
        config: PathBuf,
        /// beta, eta, rounds, cohort, sigma or hetero
        #[arg(long)]
        axis: String,
        /// Comma-separated values
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Run the invariant checks.
    Validate {
        /// all, problems, sampling, engine, schedules, diagnostics or harness
        #[arg(default_value = "all")]
        scope: String,
    },
    /// Continue a checkpointed run.
    Resume {
        checkpoint: PathBuf,
        /// Override the recorded CSV path.
        #[arg(long)]
        csv_path: Option<PathBuf>,
        /// Override the recorded summary path.
        #[arg(long)]
        summary_path: Option<PathBuf>,
    },
}

/// `FEDMOM_THREADS`: 0 runs serially, n > 0 sizes the worker pool.
fn run_options() -> Result<RunOptions, Error> {
    let Ok(raw) = std::env::var("FEDMOM_THREADS") else {
        return Ok(RunOptions::default());
    };
    let threads: usize = raw.trim().parse().map_err(|_| Error::Config {
        key: "FEDMOM_THREADS".into(),
        message: format!("expected a non-negative integer, got {raw:?}"),
    })?;
    if threads == 0 {
        return Ok(RunOptions { parallel: false });
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config {
            key: "FEDMOM_THREADS".into(),
            message: e.to_string(),
        })?;
    Ok(RunOptions { parallel: true })
}

fn read(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn dispatch(command: Command) -> Result<i32, Error> {
    match command {
        Command::Validate { scope } => Ok(cmd_validate(scope.parse::<Scope>()?)),
        Command::Run { config } => {
            let opts = run_options()?;
            cmd_run(&parse_config(&read(&config)?)?, opts)
        }
        Command::Sweep { config, axis, values } => {
            let opts = run_options()?;
            cmd_sweep(&parse_config(&read(&config)?)?, &axis, &values, opts)
        }
        Command::Resume {
            checkpoint,
            csv_path,
            summary_path,
        } => {
            let opts = run_options()?;
            cmd_resume(&read(&checkpoint)?, csv_path, summary_path, opts)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
