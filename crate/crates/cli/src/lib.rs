//! `voltjump run | validate | list-experiments`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error,
//! 3 failed hypothesis check, 4 exploded paths.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use voltjump_core::experiment::{self, ExperimentConfig, RunOptions, REGISTRY};
use voltjump_core::Error;

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_HYPOTHESIS: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "voltjump", version, about = "Stochastic Volterra equations with jumps: simulation and diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Master seed; overrides the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Replicate count; overrides the config.
        #[arg(long)]
        replicates: Option<usize>,
        /// Directory for CSV outputs and the manifest.
        #[arg(long, default_value = "results")]
        out_dir: PathBuf,
        /// Worker threads (defaults to one per core).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
    /// Print the registered experiment kinds and their required params.
    ListExperiments,
}

/// Maps an error to the exit-code contract.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Invalid { .. } | Error::Parse { .. } | Error::Json(_) => EXIT_CONFIG,
        Error::Hypothesis { .. } => EXIT_HYPOTHESIS,
        _ => EXIT_RUNTIME,
    }
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, (i32, String)> {
    let text = std::fs::read_to_string(path).map_err(|e| (EXIT_CONFIG, format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_json(&text).map_err(|e| (exit_code(&e), format!("{}: {e}", path.display())))
}

pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            code
        }
    }
}

fn execute(cmd: Command) -> Result<i32, (i32, String)> {
    match cmd {
        Command::ListExperiments => {
            for k in REGISTRY.iter() {
                println!("{:<18} {}", k.name, k.summary);
                println!("{:<18} required params: {}", "", k.required.join(", "));
            }
            Ok(0)
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            println!("{}: valid {} config", config.display(), cfg.spec.kind().name);
            Ok(0)
        }
        Command::Run {
            config,
            seed,
            replicates,
            out_dir,
            threads,
        } => {
            let cfg = load(&config)?;
            let opts = RunOptions {
                out_dir,
                seed,
                replicates,
                threads,
                ..Default::default()
            };
            let summary = experiment::run(&cfg, &opts).map_err(|e| (exit_code(&e), e.to_string()))?;
            for h in summary.manifest.hypotheses.iter().filter(|h| !h.passed) {
                eprintln!("hypothesis check failed ({}): {}", h.name, h.detail);
            }
            println!(
                "{} finished with status {}; outputs in {}",
                summary.manifest.experiment,
                serde_json::to_value(summary.status).map_err(|e| (EXIT_RUNTIME, e.to_string()))?,
                summary.out_dir.display()
            );
            Ok(summary.status.exit_code())
        }
    }
}
