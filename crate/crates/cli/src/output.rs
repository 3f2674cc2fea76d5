use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::args::OutputArgs;
use crate::CliError;

pub const OUT_ENV: &str = "FASTVIE_OUT";

/// `--out`, else `$FASTVIE_OUT`, else `./out/<command>`.
pub fn resolve_dir(args: &OutputArgs, command: &str) -> PathBuf {
    if let Some(p) = &args.out {
        return p.clone();
    }
    match std::env::var_os(OUT_ENV) {
        Some(p) if !p.is_empty() => PathBuf::from(p),
        _ => PathBuf::from("out").join(command),
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

/// Scientific notation with 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub enum Cell {
    F(f64),
    U(usize),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => num(*x),
            Cell::U(n) => n.to_string(),
            Cell::Empty => String::new(),
        }
    }
}

pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = Vec<Cell>>,
{
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row.iter().map(Cell::render)).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize)]
pub struct Meta<'a, C: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub status: &'a str,
    pub config: &'a C,
    pub derived: Value,
    pub results: Value,
    pub wall_seconds: Value,
    pub iterations: Option<&'a [usize]>,
}

pub fn write_meta<C: Serialize>(dir: &Path, meta: &Meta<C>) -> Result<(), CliError> {
    let path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(meta).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
