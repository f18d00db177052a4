//! Experiment driver: parameter sweeps, the two-type report and the
//! verification suite, each emitting deterministic CSV or JSON.

// Negated comparisons are used on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod sweeps;
pub mod table;
pub mod two_type;
pub mod verify;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use config::ExperimentConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "incentive-mech",
    version,
    about = "Data-sharing mechanism experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML experiment config; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Dotted `key=value` config override; may be repeated.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Stand-alone optimum and utility over a cost axis (CSV).
    IndividualSweep,
    /// Known-cost shaping equilibrium over n, c or k (CSV).
    EquilibriumSweep,
    /// Smallest population with a positive equilibrium (CSV).
    MinAgents,
    /// Two-type screening under sampled types (JSON).
    TwoType,
    /// Property and oracle suite (JSON); exit 2 on any failed check.
    Verify,
}

/// A rendered result plus the error, if any, to report after writing it.
pub struct Outcome {
    pub body: String,
    pub warnings: Vec<String>,
    pub failure: Option<CliError>,
}

fn json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report is serializable");
    s.push('\n');
    s
}

pub fn execute(command: Command, cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let mut warnings = Vec::new();
    let mut failure = None;
    let body = match command {
        Command::IndividualSweep => sweeps::individual_csv(&sweeps::individual_sweep(cfg)?),
        Command::EquilibriumSweep => {
            let rows = sweeps::equilibrium_sweep(cfg)?;
            let bad = rows.iter().filter(|r| r.status != "ok").count();
            if bad > 0 {
                failure = Some(CliError::NonConvergence(format!(
                    "{bad} sweep points did not converge"
                )));
            }
            sweeps::equilibrium_csv(&rows)
        }
        Command::MinAgents => sweeps::min_agents_csv(&sweeps::min_agents_sweep(cfg)?),
        Command::TwoType => {
            let report = two_type::two_type_report(cfg)?;
            warnings.extend(report.warnings.iter().cloned());
            if report.nonconverged_draws > 0 {
                failure = Some(CliError::NonConvergence(format!(
                    "{} of {} draws did not converge",
                    report.nonconverged_draws, report.draws
                )));
            }
            json(&report)
        }
        Command::Verify => {
            let report = verify::verify_report(cfg)?;
            warnings.extend(report.warnings.iter().cloned());
            if !report.pass {
                failure = Some(CliError::Verification(format!(
                    "failed checks: {}",
                    report.failed().join(", ")
                )));
            }
            json(&report)
        }
    };
    Ok(Outcome {
        body,
        warnings,
        failure,
    })
}

fn write_output(path: Option<&Path>, body: &str) -> Result<(), CliError> {
    match path {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            }
            std::fs::write(path, body).map_err(|e| CliError::io(path, e))
        }
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(body.as_bytes())
                .map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}

/// Loads the config, runs the command and writes its output.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output = Some(out.clone());
    }
    let outcome = execute(cli.command, &cfg)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    write_output(cfg.output.as_deref(), &outcome.body)?;
    outcome.failure.map_or(Ok(()), Err)
}
