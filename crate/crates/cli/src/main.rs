//! `critsys`: coupling algebra, coupled solves, sweeps and checks from the shell.
//!
//! Exit codes: 0 ok, 1 configuration, 2 coupling algebra, 3 solver non-convergence.

mod check;
mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use commands::{pretty, Failure, Outcome};
use config::{ConfigFlags, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "critsys",
    version,
    about = "Least-energy solutions of critically coupled Schrodinger systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Proportional root (k0, l0), beta0, Jacobian and the branch table.
    Coupling,
    /// Coupled solve on a ball; writes pair.csv and report.json.
    Solve,
    /// Warm-started sweep over --betas; writes sweep.csv and sweep.json.
    Sweep,
    /// Energy deficit on shrinking balls; writes smallball.csv and smallball.json.
    Smallball,
    /// Runs the invariant suite and prints one row per invariant.
    Check {
        /// Coupling-algebra invariants only.
        #[arg(long)]
        quick: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Coupling => "coupling",
            Command::Solve => "solve",
            Command::Sweep => "sweep",
            Command::Smallball => "smallball",
            Command::Check { .. } => "check",
        }
    }
}

fn envelope(command: &str, config: &RunConfig, result: Value) -> Value {
    json!({
        "tool": "critsys",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
        "result": result,
    })
}

fn report_failures(command: &str, failures: &[Failure]) -> ExitCode {
    let errors: Vec<Value> = failures
        .iter()
        .map(|f| json!({ "kind": f.kind(), "message": f.message() }))
        .collect();
    let out = json!({
        "tool": "critsys",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "errors": errors,
    });
    eprintln!("{}", pretty(&out));
    let code = failures.iter().map(Failure::code).max().unwrap_or(1);
    ExitCode::from(code as u8)
}

/// Fills the grid defaults of `command` so the emitted config is complete.
fn with_defaults(mut c: RunConfig, command: &Command) -> RunConfig {
    let (m, g) = match command {
        Command::Smallball => {
            let d = critsys::experiments::SmallBallOptions::default();
            (d.intervals, d.grading)
        }
        Command::Solve | Command::Sweep => {
            (512, critsys::radial::Grading::Algebraic { power: 1.5 })
        }
        Command::Coupling | Command::Check { .. } => return c,
    };
    c.intervals.get_or_insert(m);
    c.grading.get_or_insert(g);
    c
}

fn emit(command: &str, config: &RunConfig, outcome: Outcome) -> ExitCode {
    match outcome {
        Ok(out) => {
            let text = pretty(&envelope(command, config, out.result));
            if let Some(path) = out.json_path {
                if let Err(e) = std::fs::write(&path, format!("{text}\n")) {
                    return report_failures(
                        command,
                        &[Failure::Config(format!("{}: {e}", path.display()))],
                    );
                }
            }
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::SUCCESS
        }
        Err(f) => report_failures(command, &[f]),
    }
}

fn run_check(config: &RunConfig, quick: bool) -> ExitCode {
    let rows = check::run(quick, config.seed, config.jobs);
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut stdout = std::io::stdout().lock();
    for r in &rows {
        let mark = if r.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(
            stdout,
            "{mark}  {:<7} {:<width$}  {}",
            r.kind, r.name, r.detail
        );
    }
    let failures: Vec<Failure> = rows
        .iter()
        .filter(|r| !r.passed)
        .map(|r| {
            let msg = format!("{}: {}", r.name, r.detail);
            if r.kind == "algebra" {
                Failure::Algebra(msg)
            } else {
                Failure::Solver(msg)
            }
        })
        .collect();
    if let Some(dir) = &config.out {
        let text = pretty(&envelope("check", config, json!({ "invariants": rows })));
        let written = std::fs::create_dir_all(dir)
            .and_then(|_| std::fs::write(dir.join("check.json"), format!("{text}\n")));
        if let Err(e) = written {
            return report_failures(
                "check",
                &[Failure::Config(format!("{}: {e}", dir.display()))],
            );
        }
    }
    if failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        report_failures("check", &failures)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    let command = cli.command.name();
    let env_out = std::env::var_os("CRITSYS_OUT").map(PathBuf::from);
    let config = match RunConfig::resolve(&cli.flags, env_out) {
        Ok(c) => with_defaults(c, &cli.command),
        Err(msg) => return report_failures(command, &[Failure::Config(msg)]),
    };
    match cli.command {
        Command::Coupling => emit(command, &config, commands::coupling(&config)),
        Command::Solve => emit(command, &config, commands::solve(&config)),
        Command::Sweep => emit(command, &config, commands::sweep(&config)),
        Command::Smallball => emit(command, &config, commands::small_ball(&config)),
        Command::Check { quick } => run_check(&config, quick),
    }
}
