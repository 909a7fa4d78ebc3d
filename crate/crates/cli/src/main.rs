//! `supgcl`: synthetic data, GRN estimation, contrastive pretraining,
//! embedding export, fine-tuning and identity checks.

mod commands;
mod config;
mod manifest;

use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use supgcl::downstream::Task;
use supgcl::pretrain::Objective;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    MissingInput(String),
    #[error("{0}")]
    Verification(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn from_io(path: &Path, e: std::io::Error) -> Self {
        let msg = format!("{}: {e}", path.display());
        if e.kind() == ErrorKind::NotFound {
            CliError::MissingInput(msg)
        } else {
            CliError::Other(msg)
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::MissingInput(_) => "missing_input",
            CliError::Verification(_) => "verification_failed",
            CliError::Other(_) => "other",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingInput(_) => 3,
            CliError::Verification(_) => 4,
            CliError::Other(_) => 5,
        }
    }
}

impl From<supgcl::Error> for CliError {
    fn from(e: supgcl::Error) -> Self {
        match e {
            supgcl::Error::Config(m) => CliError::Config(m),
            supgcl::Error::Io { ref source, .. } if source.kind() == ErrorKind::NotFound => {
                CliError::MissingInput(e.to_string())
            }
            supgcl::Error::MissingTeacher(_) => CliError::MissingInput(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "supgcl", version, about)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic benchmark dataset.
    Synth,
    /// Estimate a network from an expression matrix and derive per-sample GRNs.
    Estimate {
        /// Gene-by-sample TSV.
        #[arg(long)]
        expression: PathBuf,
    },
    /// Contrastive pretraining of the encoder.
    Pretrain {
        #[command(flatten)]
        data: DataArgs,
        /// Teacher manifest (default: `<data>/teachers.json`).
        #[arg(long)]
        teachers: Option<PathBuf>,
        /// Overrides the configured objective.
        #[arg(long, value_parser = parse_objective)]
        objective: Option<Objective>,
    },
    /// Export node and pooled embeddings.
    Embed {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Cross-validated fine-tuning on one task.
    Finetune {
        #[command(flatten)]
        data: DataArgs,
        /// Pretrained encoder; a fresh one when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_parser = parse_task)]
        task: Task,
    },
    /// Every configured downstream task under its evaluation protocol.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Numerical identity and oracle checks.
    Verify,
    /// Grid search over learning rate, batch size and temperature.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        teachers: Option<PathBuf>,
    },
}

#[derive(Debug, clap::Args)]
pub struct DataArgs {
    /// Dataset directory with `patients/` and the label files.
    #[arg(long, env = "SUPGCL_DATA_ROOT")]
    pub data: PathBuf,
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse().map_err(|e: supgcl::Error| e.to_string())
}

fn parse_objective(s: &str) -> Result<Objective, String> {
    match s {
        "supgcl" => Ok(Objective::Supgcl),
        "grace" => Ok(Objective::Grace),
        _ => Err(format!("unknown objective {s:?}; expected supgcl or grace")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = json!({
                "error": e.kind(),
                "message": e.to_string(),
                "exit_code": e.exit_code(),
            });
            eprintln!("{record}");
            ExitCode::from(e.exit_code())
        }
    }
}
