//! `gexpect`: runs configured scenarios of the gexpect-core solvers and
//! writes reproducible result directories.

mod commands;
mod config;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use config::{declared_command, prepare, Scenario, COMMANDS};
use report::{CliError, ResultDocument};

#[derive(Parser)]
#[command(name = "gexpect", version, about = "Sublinear expectations under volatility uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Nonlinear heat equation on a grid.
    Gheat(RunArgs),
    /// HJB equation of a model.
    Hjb(RunArgs),
    /// Nonlinear G-BSDE by Picard iteration.
    Bsde(RunArgs),
    /// Uncertain-volatility option prices.
    Bsb(RunArgs),
    /// Linear prices over constant variances of the band.
    Scan(RunArgs),
    /// Monte Carlo value of a volatility policy.
    Mc(RunArgs),
    /// Quadratic-variation rate difference over shrinking windows.
    Counterexample(RunArgs),
    /// Acceptance criteria and a suite of scenarios with assertions.
    Verify(RunArgs),
    /// Checks a configuration without running it.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; all cores when absent or 0.
    #[arg(long, env = "GEXPECT_THREADS")]
    threads: Option<usize>,
    /// Add the selected variance rates to surface CSVs.
    #[arg(long)]
    emit_policy: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
}

pub struct RunSettings {
    pub emit_policy: bool,
    pub threads: usize,
}

fn read_config(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Config {
        message: format!("cannot read {}: {e}", path.display()),
        field: None,
        max_dt: None,
    })
}

/// Executes a prepared scenario and writes `config.json`, the CSV outputs
/// and `result.json` into `dir`.
pub fn write_run(
    command: &str,
    bytes: &[u8],
    scenario: Scenario,
    settings: &RunSettings,
    dir: &Path,
) -> Result<ResultDocument, CliError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), bytes)?;
    let start = Instant::now();
    let outcome = commands::execute(scenario, settings, dir)?;
    let wall = start.elapsed().as_secs_f64();
    for (name, contents) in &outcome.files {
        fs::write(dir.join(name), contents)?;
    }
    let doc = ResultDocument {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION"),
        config_file: "config.json".into(),
        config_sha256: hex::encode(Sha256::digest(bytes)),
        threads: settings.threads,
        wall_time_s: wall,
        passed: outcome.passed(),
        files: outcome.files.iter().map(|(n, _)| n.clone()).collect(),
        scalars: outcome.scalars,
        checks: outcome.checks,
        warnings: outcome.warnings,
    };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Computation(e.to_string()))?;
    fs::write(dir.join("result.json"), text + "\n")?;
    Ok(doc)
}

fn run(command: &str, args: &RunArgs) -> Result<(), CliError> {
    let bytes = read_config(&args.config)?;
    let scenario = prepare(command, &bytes, &args.config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Computation(format!("thread pool: {e}")))?;
    let settings = RunSettings {
        emit_policy: args.emit_policy,
        threads: pool.current_num_threads(),
    };
    let doc = pool.install(|| write_run(command, &bytes, scenario, &settings, &args.out))?;
    for c in &doc.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for (k, v) in &doc.scalars {
        println!("{k} = {v}");
    }
    if doc.passed {
        Ok(())
    } else {
        let failed = doc.checks.iter().filter(|c| !c.passed).count();
        Err(CliError::Verification(format!("{failed} of {} checks failed", doc.checks.len())))
    }
}

/// Diagnostics for `validate`; exit code 2 when the document is invalid.
fn validate(args: &ValidateArgs) -> (serde_json::Value, bool) {
    let result = read_config(&args.config).and_then(|bytes| {
        let command = declared_command(&bytes)?.ok_or_else(|| CliError::Config {
            message: format!("`command` is required; one of {}", COMMANDS.join(", ")),
            field: Some("command".into()),
            max_dt: None,
        })?;
        let scenario = prepare(&command, &bytes, &args.config)?;
        Ok((command, scenario))
    });
    match result {
        Ok((command, scenario)) => {
            let mut warnings = Vec::new();
            let mut resolved = serde_json::Map::new();
            match &scenario {
                Scenario::Gheat { grid, .. } | Scenario::Hjb { grid, .. } | Scenario::Bsde { grid, .. } => {
                    resolved.insert("nt".into(), json!(grid.nt));
                    resolved.insert("dt".into(), json!(grid.dt()));
                }
                Scenario::Bsb { spec, .. } | Scenario::Mc { spec, .. } => {
                    warnings.extend(spec.validate().unwrap_or_default());
                    if let Some(g) = &spec.grid {
                        resolved.insert("nt".into(), json!(g.nt));
                        resolved.insert("dt".into(), json!(g.dt()));
                    }
                }
                _ => {}
            }
            (
                json!({
                    "valid": true,
                    "command": command,
                    "diagnostics": [],
                    "warnings": warnings,
                    "resolved": resolved,
                }),
                true,
            )
        }
        Err(e) => {
            let mut d = json!({
                "severity": "error",
                "kind": e.kind(),
                "field": match &e { CliError::Config { field, .. } => field.clone(), _ => None },
                "message": match &e { CliError::Config { message, .. } => message.clone(), other => other.to_string() },
            });
            if let CliError::Config { max_dt: Some(dt), .. } = &e {
                d["max_admissible_dt"] = json!(dt);
            }
            (json!({ "valid": false, "diagnostics": [d], "warnings": [] }), false)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Validate(v) => {
            let (report, ok) = validate(v);
            println!("{}", serde_json::to_string_pretty(&report).unwrap_or_default());
            return ExitCode::from(if ok { 0 } else { 2 });
        }
        Command::Gheat(a) => ("gheat", a),
        Command::Hjb(a) => ("hjb", a),
        Command::Bsde(a) => ("bsde", a),
        Command::Bsb(a) => ("bsb", a),
        Command::Scan(a) => ("scan", a),
        Command::Mc(a) => ("mc", a),
        Command::Counterexample(a) => ("counterexample", a),
        Command::Verify(a) => ("verify", a),
    };
    match run(name, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
