//! `xmodal`: corpus generation, training, evaluation, validation and reports.
//!
//! Exit codes: 0 success, 2 config or usage error, 3 I/O error, 4 numeric failure.

mod commands;
mod config;
mod manifest;
mod report;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: String) -> Self {
        Self { code: EXIT_CONFIG, message }
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        Self { code: EXIT_IO, message: format!("{}: {e}", path.display()) }
    }
}

impl From<xmodal_core::Error> for Failure {
    fn from(e: xmodal_core::Error) -> Self {
        use xmodal_core::Error::*;
        let code = match &e {
            Config(_) | Invalid(_) | Shape(_) | NotApplicable(_) => EXIT_CONFIG,
            Io { .. } | Format(_) | Json(_) => EXIT_IO,
            NonFinite(_) => EXIT_NUMERIC,
        };
        Self { code, message: e.to_string() }
    }
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::io(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Failure::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| Failure::io(path, e))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    MarkdownTable,
}

#[derive(Parser, Debug)]
#[command(name = "xmodal", version, about = "Descriptor-injected audio/MIDI retrieval lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic matched-pair corpus into <out>/corpus.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Corpus seed; defaults to the config's corpus_seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one arm on <out>/corpus; checkpoints land in <out>/ckpt/<arm>-s<seed>.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        arm: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        precision: Precision,
    },
    /// Score a checkpoint on the structured retrieval pool.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON pool configuration; defaults to the checkpoint's own pool.
        #[arg(long)]
        pool_config: Option<PathBuf>,
        /// Pool seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run root holding corpus/ and reports/; inferred from <root>/ckpt/<run>/<file>.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        precision: Precision,
    },
    /// Run validation tests against a checkpoint.
    Validate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated test ids.
        #[arg(long, value_delimiter = ',', default_value = "t01,t02,t03,t04,t06,t08,t09,t10")]
        tests: Vec<String>,
        #[arg(long)]
        pool_config: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        precision: Precision,
    },
    /// Merge retrieval reports into a comparison table.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
        /// Arm to compare multi-seed results against.
        #[arg(long)]
        baseline: Option<String>,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData { config, seed, out } => commands::gen_data(config.as_deref(), seed, &out),
        Command::Train { config, arm, seed, out, precision } => {
            commands::train(config.as_deref(), arm.as_deref(), seed, &out, precision)
        }
        Command::Eval { checkpoint, pool_config, seed, out, precision } => {
            commands::eval(&checkpoint, pool_config.as_deref(), seed, out.as_deref(), precision)
        }
        Command::Validate { checkpoint, tests, pool_config, seed, out, precision } => {
            commands::validate(&checkpoint, &tests, pool_config.as_deref(), seed, out.as_deref(), precision)
        }
        Command::Report { inputs, format, baseline } => report::report(&inputs, format, baseline.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
