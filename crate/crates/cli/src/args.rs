use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fastvie::Mode;
use fastvie_greens::dyson::Taper;

use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "fastvie",
    version,
    about = "Fast Volterra solvers for equilibrium Green's functions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Bethe lattice: Matsubara solve, mixed real-time run, exact comparison.
    Bethe(BetheArgs),
    /// SYK model at desk scale.
    Syk(SykArgs),
    /// Non-interacting model through the mixed pipeline.
    Free(FreeArgs),
    /// Wall-clock sweep of fast and direct history summation.
    Bench(BenchArgs),
    /// Observed convergence order of the time stepper.
    Convergence(ConvergenceArgs),
    /// Runs the built-in oracle checks.
    Selftest(SelftestArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Bethe(_) => "bethe",
            Command::Syk(_) => "syk",
            Command::Free(_) => "free",
            Command::Bench(_) => "bench",
            Command::Convergence(_) => "convergence",
            Command::Selftest(_) => "selftest",
        }
    }

    /// Options of the command alone, as recorded in `meta.json`.
    pub fn config(&self) -> serde_json::Value {
        match self {
            Command::Bethe(a) => serde_json::json!(a),
            Command::Syk(a) => serde_json::json!(a),
            Command::Free(a) => serde_json::json!(a),
            Command::Bench(a) => serde_json::json!(a),
            Command::Convergence(a) => serde_json::json!(a),
            Command::Selftest(a) => serde_json::json!(a),
        }
    }

    pub fn output(&self) -> Option<&OutputArgs> {
        match self {
            Command::Bethe(a) => Some(&a.output),
            Command::Syk(a) => Some(&a.output),
            Command::Free(a) => Some(&a.output),
            Command::Bench(a) => Some(&a.output),
            Command::Convergence(a) => Some(&a.output),
            Command::Selftest(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Fast,
    Direct,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Fast => Mode::Fast,
            ModeArg::Direct => Mode::Direct,
        }
    }
}

/// Any two of `dt`, `tmax`, `n` fix the uniform grid `t_n = n dt`.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct TimeArgs {
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub tmax: Option<f64>,
    /// Number of time points including t = 0.
    #[arg(long = "n")]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    pub dt: f64,
    pub n_points: usize,
    pub tmax: f64,
}

impl TimeArgs {
    /// Resolves the grid, filling unset values from `default` where needed.
    pub fn resolve(&self, default: Grid) -> Result<Grid, CliError> {
        let g = match (self.dt, self.tmax, self.n) {
            (Some(_), Some(_), Some(_)) => {
                return Err(CliError::Validation("give at most two of --dt, --tmax, --n".into()))
            }
            (Some(dt), Some(t), None) => Grid {
                dt,
                n_points: (t / dt).round() as usize + 1,
                tmax: t,
            },
            (Some(dt), None, Some(n)) => Grid {
                dt,
                n_points: n,
                tmax: dt * (n.max(1) - 1) as f64,
            },
            (None, Some(t), Some(n)) => Grid {
                dt: t / (n.max(2) - 1) as f64,
                n_points: n,
                tmax: t,
            },
            (Some(dt), None, None) => Grid {
                dt,
                n_points: (default.tmax / dt).round() as usize + 1,
                tmax: default.tmax,
            },
            (None, Some(t), None) => Grid {
                dt: default.dt,
                n_points: (t / default.dt).round() as usize + 1,
                tmax: t,
            },
            (None, None, Some(n)) => Grid {
                dt: default.dt,
                n_points: n,
                tmax: default.dt * (n.max(1) - 1) as f64,
            },
            (None, None, None) => default,
        };
        if !(g.dt > 0.0 && g.dt.is_finite()) || !(g.tmax > 0.0) || g.n_points < 2 {
            return Err(CliError::Validation(format!(
                "invalid time grid: dt={}, tmax={}, n={}",
                g.dt, g.tmax, g.n_points
            )));
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolverArgs {
    /// Method order (even, 2..=8).
    #[arg(long, default_value_t = 8)]
    pub p: usize,
    /// Gregory correction count; defaults to p - 1.
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long, value_enum, default_value_t = ModeArg::Fast)]
    pub mode: ModeArg,
    /// Rows in each directly summed base block.
    #[arg(long)]
    pub base_size: Option<usize>,
    #[arg(long)]
    pub fp_tol: Option<f64>,
    #[arg(long, default_value_t = 50)]
    pub fp_max: usize,
    #[arg(long, default_value_t = 1.0)]
    pub damping: f64,
}

impl Default for SolverArgs {
    fn default() -> Self {
        Self {
            p: 8,
            q: None,
            mode: ModeArg::Fast,
            base_size: None,
            fp_tol: None,
            fp_max: 50,
            damping: 1.0,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BasisArgs {
    /// Dimensionless cutoff beta * omega_max.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Mixing weight of the Matsubara fixed point.
    #[arg(long)]
    pub mix: Option<f64>,
    #[arg(long, default_value_t = 1e-13)]
    pub mats_tol: f64,
    #[arg(long, default_value_t = 2000)]
    pub mats_max: usize,
}

impl Default for BasisArgs {
    fn default() -> Self {
        Self {
            lambda: None,
            eps: None,
            mix: None,
            mats_tol: 1e-13,
            mats_max: 2000,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct SpectralArgs {
    #[arg(long)]
    pub omega_min: Option<f64>,
    #[arg(long)]
    pub omega_max: Option<f64>,
    /// Zero padding factor of the transform.
    #[arg(long, default_value_t = 2)]
    pub pad: usize,
    /// `none`, `cosine:<fraction>` or `exp:<rate>`.
    #[arg(long, default_value = "cosine:0.1")]
    pub taper: String,
}

pub fn parse_taper(s: &str) -> Result<Taper, CliError> {
    let bad = || CliError::Validation(format!("unrecognized taper '{s}'"));
    if s == "none" {
        return Ok(Taper::None);
    }
    let (kind, val) = s.split_once(':').ok_or_else(bad)?;
    let v: f64 = val.parse().map_err(|_| bad())?;
    match kind {
        "cosine" if (0.0..=1.0).contains(&v) => Ok(Taper::Cosine { fraction: v }),
        "exp" if v >= 0.0 => Ok(Taper::Exponential { rate: v }),
        _ => Err(bad()),
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OutputArgs {
    /// Output directory. Falls back to $FASTVIE_OUT, then ./out/<command>.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write every `stride`-th time row to the large CSV files.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Refuse runs whose estimated history storage exceeds this many MiB.
    #[arg(long, default_value_t = 4096)]
    pub mem_cap_mb: usize,
}

impl Default for OutputArgs {
    fn default() -> Self {
        Self {
            out: None,
            stride: 1,
            mem_cap_mb: 4096,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct BetheArgs {
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub h: f64,
    #[arg(long, default_value_t = 10.0)]
    pub beta: f64,
    #[command(flatten)]
    pub time: TimeArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub basis: BasisArgs,
    #[command(flatten)]
    pub spectral: SpectralArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Time rows in gtv.csv.
    #[arg(long, default_value_t = 201)]
    pub gtv_times: usize,
    /// Uniform tau samples per row in gtv.csv.
    #[arg(long, default_value_t = 33)]
    pub gtv_taus: usize,
    /// Skip the retarded-only comparison run.
    #[arg(long)]
    pub no_retarded_check: bool,
}

impl Default for BetheArgs {
    fn default() -> Self {
        Self {
            c: 1.0,
            h: -1.0,
            beta: 10.0,
            time: TimeArgs::default(),
            solver: SolverArgs::default(),
            basis: BasisArgs::default(),
            spectral: SpectralArgs {
                pad: 2,
                taper: "cosine:0.1".into(),
                ..Default::default()
            },
            output: OutputArgs::default(),
            gtv_times: 201,
            gtv_taus: 33,
            no_retarded_check: false,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct SykArgs {
    #[arg(long = "J", default_value_t = 1.0)]
    pub j: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub h: f64,
    #[arg(long, default_value_t = 100.0)]
    pub beta: f64,
    #[command(flatten)]
    pub time: TimeArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub basis: BasisArgs,
    #[command(flatten)]
    pub spectral: SpectralArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

impl Default for SykArgs {
    fn default() -> Self {
        Self {
            j: 1.0,
            h: 0.0,
            beta: 100.0,
            time: TimeArgs::default(),
            solver: SolverArgs::default(),
            basis: BasisArgs::default(),
            spectral: SpectralArgs {
                pad: 2,
                taper: "cosine:0.1".into(),
                ..Default::default()
            },
            output: OutputArgs::default(),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct FreeArgs {
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    pub h: f64,
    #[arg(long, default_value_t = 10.0)]
    pub beta: f64,
    #[command(flatten)]
    pub time: TimeArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub basis: BasisArgs,
    #[command(flatten)]
    pub spectral: SpectralArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

impl Default for FreeArgs {
    fn default() -> Self {
        Self {
            h: 0.5,
            beta: 10.0,
            time: TimeArgs::default(),
            solver: SolverArgs::default(),
            basis: BasisArgs::default(),
            spectral: SpectralArgs {
                pad: 2,
                taper: "cosine:0.1".into(),
                ..Default::default()
            },
            output: OutputArgs::default(),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct BenchArgs {
    /// Comma-separated list of N; overrides the exponent range.
    #[arg(long, value_delimiter = ',')]
    pub n_list: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    pub min_exp: u32,
    #[arg(long, default_value_t = 18)]
    pub max_exp: u32,
    /// Largest N timed with direct summation.
    #[arg(long, default_value_t = 16384)]
    pub direct_max: usize,
    /// Sweep rounds; each round times every entry once (medians reported).
    #[arg(long, default_value_t = 7)]
    pub repeats: usize,
    /// Each timed sample averages enough solves to last this long.
    #[arg(long, default_value_t = 0.02)]
    pub batch_seconds: f64,
    #[arg(long, default_value_t = 0.015625)]
    pub dt: f64,
    #[arg(long, default_value_t = 8)]
    pub p: usize,
    #[arg(long)]
    pub base_size: Option<usize>,
    #[command(flatten)]
    pub output: OutputArgs,
}

impl Default for BenchArgs {
    fn default() -> Self {
        Self {
            n_list: Vec::new(),
            min_exp: 8,
            max_exp: 18,
            direct_max: 16384,
            repeats: 7,
            batch_seconds: 0.02,
            dt: 0.015625,
            p: 8,
            base_size: None,
            output: OutputArgs::default(),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct ConvergenceArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![2usize, 4, 8])]
    pub p_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.2, 0.1, 0.05, 0.025, 0.0125])]
    pub dt_list: Vec<f64>,
    #[arg(long, default_value_t = 100.0)]
    pub tmax: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub h: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Fast)]
    pub mode: ModeArg,
    #[command(flatten)]
    pub output: OutputArgs,
}

impl Default for ConvergenceArgs {
    fn default() -> Self {
        Self {
            p_list: vec![2, 4, 8],
            dt_list: vec![0.2, 0.1, 0.05, 0.025, 0.0125],
            tmax: 100.0,
            c: 1.0,
            h: -1.0,
            mode: ModeArg::Fast,
            output: OutputArgs::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct SelftestArgs {
    /// Only list the checks.
    #[arg(long)]
    pub list: bool,
}
