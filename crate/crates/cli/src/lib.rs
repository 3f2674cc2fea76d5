//! Experiment driver behind the `fastvie` binary. Every run writes CSV
//! tables and a `meta.json` with its full configuration.

pub mod args;
pub mod bench;
pub mod output;
pub mod physics;
pub mod selftest;

use std::fmt;

use serde_json::Value;

use args::Command;
use fastvie_greens::GreensError;

#[derive(Debug)]
pub enum CliError {
    /// Bad input or configuration. Exit code 1.
    Validation(String),
    /// Solver failure. Exit code 2.
    Solver(String),
    /// Output could not be written. Exit code 2.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Solver(_) | CliError::Io(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid configuration: {m}"),
            CliError::Solver(m) => write!(f, "solver failure: {m}"),
            CliError::Io(m) => write!(f, "output error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<fastvie::Error> for CliError {
    fn from(e: fastvie::Error) -> Self {
        match e {
            fastvie::Error::NoConvergence { .. } | fastvie::Error::State(_) => CliError::Solver(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<GreensError> for CliError {
    fn from(e: GreensError) -> Self {
        match e {
            GreensError::Config(m) => CliError::Validation(m),
            GreensError::Io(m) => CliError::Io(m),
            GreensError::Solver(inner) => inner.into(),
            other => CliError::Solver(other.to_string()),
        }
    }
}

/// Runs one command. `selftest` prints its report and fails with
/// [`CliError::Validation`] listing the failing checks. A solver failure
/// leaves a `meta.json` with status `failed` in the output directory.
pub fn run(cmd: &Command) -> Result<Value, CliError> {
    let res = dispatch(cmd);
    if let (Err(e @ CliError::Solver(_)), Some(out)) = (&res, cmd.output()) {
        let dir = output::resolve_dir(out, cmd.name());
        let meta = output::Meta {
            command: cmd.name(),
            version: output::VERSION,
            status: "failed",
            config: &cmd.config(),
            derived: Value::Null,
            results: serde_json::json!({ "error": e.to_string() }),
            wall_seconds: Value::Null,
            iterations: None,
        };
        let _ = output::ensure_dir(&dir).and_then(|()| output::write_meta(&dir, &meta));
    }
    res
}

fn dispatch(cmd: &Command) -> Result<Value, CliError> {
    match cmd {
        Command::Bethe(a) => physics::run_bethe(a),
        Command::Syk(a) => physics::run_syk(a),
        Command::Free(a) => physics::run_free(a),
        Command::Bench(a) => bench::run_bench(a),
        Command::Convergence(a) => bench::run_convergence(a),
        Command::Selftest(a) => {
            let failed = selftest::run_all(a.list);
            if failed.is_empty() {
                Ok(Value::Null)
            } else {
                Err(CliError::Validation(format!("failing checks: {}", failed.join("; "))))
            }
        }
    }
}
