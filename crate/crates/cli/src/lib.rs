//! The `slalom` command line: benchmarks, soundness studies, end-to-end
//! model runs and tape generation.

mod bench;
mod models;
mod report;
mod settings;
mod soundness;

pub use bench::{bench_rows, BenchRow, CSV_SCHEMA_VERSION};
pub use settings::{parse_strategy, parse_tamper, Settings};

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_ABORT: i32 = 3;
pub const EXIT_DATA: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    /// A run ended in the abort symbol, or a soundness row exceeded its bound.
    #[error("{0}")]
    Abort(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Abort(_) => EXIT_ABORT,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "slalom",
    about = "Outsourced DNN inference with Freivalds checks and one-time blinding"
)]
struct Cli {
    /// JSON file with default values for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Verb {
    /// Compute versus verify cost for synthetic layers and presets.
    Bench,
    /// Empirical acceptance of tampered outputs with tiny check sets.
    Soundness,
    /// Run a model end to end in one mode.
    VerifyModel,
    /// Write sealed blinding tapes, one file per run.
    MakeTape,
    /// Write a preset model to disk.
    MakePreset,
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let settings = match &cli.config {
        Some(p) => cli.settings.clone().over(Settings::load(p)?),
        None => cli.settings.clone(),
    };
    match cli.verb {
        Verb::Bench => bench::cmd_bench(&settings, out),
        Verb::Soundness => soundness::cmd_soundness(&settings, out),
        Verb::VerifyModel => models::cmd_verify_model(&settings, out),
        Verb::MakeTape => models::cmd_make_tape(&settings, out),
        Verb::MakePreset => models::cmd_make_preset(&settings, out),
    }
}

/// Parses `args` (program name first), runs the verb and returns the exit
/// code. Human-readable output goes to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if code == EXIT_OK {
                write!(out, "{e}")
            } else {
                write!(err, "{e}")
            };
            return code;
        }
    };
    let result = dispatch(&cli, out);
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
