//! `catgen` command-line front end.
//!
//! Every command takes a JSON config and writes its outputs plus a
//! `manifest.json` into the output directory. Failures print one line to
//! stderr and exit with 2 (config), 3 (data) or 4 (estimation).

pub mod commands;
pub mod config;

use std::path::PathBuf;
use std::time::Instant;

use catgen_core::{Error, ErrorCategory};
use clap::{Args, Parser, Subcommand};

pub use commands::{execute, replay, Command, ConfigSource, Manifest, Run};
pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "catgen", version, about = "Target-population CATE curves from nested trials")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Estimate the CATE curve for a cohort file.
    Estimate(CommonArgs),
    /// Run a simulation study.
    Simulate(CommonArgs),
    /// Report overlap of the fitted participation and treatment models.
    Diagnose(CommonArgs),
    /// Write the cross-validation score table for the bandwidth.
    Bandwidth(CommonArgs),
    /// Re-run a recorded manifest and verify its output hashes.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        /// Also write the reproduced outputs here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn exit_code(category: ErrorCategory) -> i32 {
    match category {
        ErrorCategory::Config => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Estimation => 4,
    }
}

/// One-line `key=value` description of a failure.
pub fn error_line(error: &Error) -> String {
    let category = error.category();
    let name = match category {
        ErrorCategory::Config => "config",
        ErrorCategory::Data => "data",
        ErrorCategory::Estimation => "estimation",
    };
    let mut line = format!("error code={} category={name}", exit_code(category));
    let message = match error {
        Error::Config { field, message } => {
            line += &format!(" field={field}");
            message.clone()
        }
        Error::Parse { row, .. } | Error::Data { row, .. } => {
            line += &format!(" row={row}");
            error.to_string()
        }
        _ => error.to_string(),
    };
    line + " message=" + &serde_json::to_string(&message).unwrap_or_default()
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, Error> {
    #[cfg(feature = "parallel")]
    if let Some(n) = workers {
        if n == 0 {
            return Err(Error::config("--workers", "must be >= 1"));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::config("--workers", e.to_string()))?;
        return Ok(pool.install(f));
    }
    #[cfg(not(feature = "parallel"))]
    if workers.is_some_and(|n| n == 0) {
        return Err(Error::config("--workers", "must be >= 1"));
    }
    Ok(f())
}

fn run_command(cli: Cli) -> Result<String, Error> {
    match cli.command {
        CliCommand::Replay { manifest, workers, out } => {
            let run = with_workers(workers, || replay(&manifest, out.as_deref()))??;
            if out.is_some() {
                run.write(&run.out_dir)?;
            }
            Ok(format!("replay ok: {} outputs match {}", run.manifest.outputs.len(), manifest.display()))
        }
        CliCommand::Estimate(args) => run_pipeline(Command::Estimate, args),
        CliCommand::Simulate(args) => run_pipeline(Command::Simulate, args),
        CliCommand::Diagnose(args) => run_pipeline(Command::Diagnose, args),
        CliCommand::Bandwidth(args) => run_pipeline(Command::Bandwidth, args),
    }
}

fn run_pipeline(command: Command, args: CommonArgs) -> Result<String, Error> {
    let source = ConfigSource::read(&args.config)?;
    let run = with_workers(args.workers, || execute(command, &source, args.seed, args.out.as_deref()))??;
    let written = run.write(&run.out_dir)?;
    Ok(written.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join("\n"))
}

/// Runs the CLI on `args` and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            eprintln!("error code=2 category=config field=arguments message={}", serde_json::to_string(&first).unwrap_or_default());
            return 2;
        }
    };
    let started = Instant::now();
    match run_command(cli) {
        Ok(summary) => {
            println!("{summary}");
            eprintln!("finished in {:.3} s", started.elapsed().as_secs_f64());
            0
        }
        Err(error) => {
            eprintln!("{}", error_line(&error));
            exit_code(error.category())
        }
    }
}
