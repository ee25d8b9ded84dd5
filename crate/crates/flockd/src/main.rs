//! Command-line front end for the flocking simulation library.
//!
//! Four subcommands share one TOML configuration schema: `run` integrates a
//! system and writes trajectory artifacts, `bounds` evaluates the guaranteed
//! decay constants without integrating, `verify` replays a run against every
//! checkable invariant and writes a pass/fail ledger, and `sweep` repeats a
//! run across a parameter list. Every error leaves a machine-readable JSON
//! envelope on stderr and a documented exit code.

mod artifacts;
mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::path::PathBuf;

/// One failure kind per exit code, carried from any layer back to `main`.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments; nothing was simulated. Exit 2.
    Validation {
        field: Option<String>,
        message: String,
    },
    /// Filesystem trouble while reading inputs or writing artifacts. Exit 2.
    Io { message: String },
    /// The integrator halted before `t_end`; partial artifacts exist. Exit 3.
    Integration { time: f64, message: String },
    /// `verify` ran to completion and at least one check failed. Exit 1.
    ChecksFailed { failed: usize },
    /// Every sweep row failed; no usable table row exists. Exit 3.
    NoRowsSucceeded,
}

impl CliError {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Validation {
            field: Some(field.into()),
            message: message.into(),
        }
    }

    pub fn validation_message(message: impl Into<String>) -> Self {
        CliError::Validation {
            field: None,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation { .. } | CliError::Io { .. } => 2,
            CliError::Integration { .. } => 3,
            CliError::ChecksFailed { .. } => 1,
            CliError::NoRowsSucceeded => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Validation { .. } => "validation",
            CliError::Io { .. } => "io",
            CliError::Integration { .. } => "integration",
            CliError::ChecksFailed { .. } => "verification",
            CliError::NoRowsSucceeded => "sweep",
        }
    }

    fn message_text(&self) -> String {
        match self {
            CliError::Validation { message, .. } => message.clone(),
            CliError::Io { message } => message.clone(),
            CliError::Integration { message, .. } => message.clone(),
            CliError::ChecksFailed { failed } => {
                format!("{failed} verification check(s) failed; see ledger.json")
            }
            CliError::NoRowsSucceeded => "every sweep row failed; see sweep.csv".into(),
        }
    }
}

/// Shape of the stderr report: schema header first, then the error itself.
#[derive(Serialize)]
struct ErrorEnvelope {
    schema_version: &'static str,
    error: ErrorBody,
    exit_code: i32,
}

#[derive(Serialize)]
struct ErrorBody {
    kind: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    time: Option<f64>,
}

#[derive(Parser)]
#[command(
    name = "flockd",
    about = "Simulate thermodynamic flocking models and check their guarantees"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one system and write trajectory, diagnostics, and summary.
    Run(CommonArgs),
    /// Evaluate decay constants and feasibility for the configured regime.
    Bounds(CommonArgs),
    /// Run, then grade every invariant and theorem envelope into a ledger.
    Verify(VerifyArgs),
    /// Repeat a run across a parameter list and tabulate the outcomes.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Directory that receives all artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Replaces the seed of a random initial condition.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress the human progress line on stdout.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Corrupt the recorded velocity spread nearest this time before grading;
    /// exists so the failure path of the ledger itself can be tested.
    #[arg(long)]
    tamper_velocity_at: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Parameter list as `name=v1,v2,...` with name in {c, chi, N, epsilon, dt}.
    #[arg(long)]
    sweep: String,
}

fn read_config(path: &PathBuf) -> Result<config::SimConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        message: format!("read {}: {e}", path.display()),
    })?;
    config::parse_config(&text)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let cfg = read_config(&args.config)?;
            commands::cmd_run(&cfg, &args.out, args.seed, args.quiet)
        }
        Command::Bounds(args) => {
            let cfg = read_config(&args.config)?;
            commands::cmd_bounds(&cfg, args.seed)
        }
        Command::Verify(args) => {
            let cfg = read_config(&args.common.config)?;
            commands::cmd_verify(
                &cfg,
                &args.common.out,
                args.common.seed,
                args.common.quiet,
                args.tamper_velocity_at,
            )
        }
        Command::Sweep(args) => {
            let cfg = read_config(&args.common.config)?;
            commands::cmd_sweep(
                &cfg,
                &args.sweep,
                &args.common.out,
                args.common.seed,
                args.common.quiet,
            )
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = dispatch(cli) {
        let (field, time) = match &err {
            CliError::Validation { field, .. } => (field.clone(), None),
            CliError::Integration { time, .. } => (None, Some(*time)),
            _ => (None, None),
        };
        let envelope = ErrorEnvelope {
            schema_version: artifacts::SCHEMA,
            error: ErrorBody {
                kind: err.kind(),
                message: err.message_text(),
                field,
                time,
            },
            exit_code: err.exit_code(),
        };
        let body = serde_json::to_string(&envelope)
            .unwrap_or_else(|_| "{\"error\":{\"kind\":\"internal\"}}".into());
        eprintln!("{body}");
        std::process::exit(err.exit_code());
    }
}
