use std::time::Instant;

use serde_json::{json, Value};

use fastvie::{solve, Mode, ProblemDef};
use fastvie_greens::dyson::{bethe_gr_exact, bethe_retarded_problem, retarded_from_trajectory, RetardedBethe};

use crate::args::{BenchArgs, ConvergenceArgs};
use crate::output::{ensure_dir, resolve_dir, write_csv, write_meta, Cell, Meta, VERSION};
use crate::physics::check_memory;
use crate::CliError;

/// Errors below this are too close to double-precision roundoff to
/// carry a convergence order.
pub const ORDER_FLOOR: f64 = 1e-13;

/// Median and quartiles of a timing sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl Stats {
    pub fn of(samples: &[f64]) -> Self {
        let mut s = samples.to_vec();
        s.sort_by(|a, b| a.total_cmp(b));
        let at = |f: f64| s[((s.len() - 1) as f64 * f).round() as usize];
        Stats {
            median: at(0.5),
            q1: at(0.25),
            q3: at(0.75),
        }
    }

    /// Half the interquartile range relative to the median.
    pub fn rel_spread(&self) -> f64 {
        0.5 * (self.q3 - self.q1) / self.median
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Timing {
    pub n: usize,
    pub fast: Stats,
    pub direct: Option<Stats>,
}

impl Timing {
    pub fn nlog2n_coeff(&self) -> f64 {
        let l = (self.n as f64).log2();
        self.fast.median / (self.n as f64 * l * l)
    }

    /// Fast not slower than direct, allowing the larger relative spread.
    pub fn fast_not_slower(&self) -> Option<bool> {
        self.direct.map(|d| {
            let noise = self.fast.rel_spread().max(d.rel_spread());
            self.fast.median <= d.median * (1.0 + noise)
        })
    }
}

type Job<'a> = Box<dyn FnMut() -> Result<(), CliError> + 'a>;

/// Mean seconds per call over `count` calls.
fn batch(f: &mut Job, count: usize) -> Result<f64, CliError> {
    let t = Instant::now();
    for _ in 0..count {
        f()?;
    }
    Ok(t.elapsed().as_secs_f64() / count as f64)
}

/// Calls per sample so that one sample lasts at least `batch_seconds`.
fn calibrate(f: &mut Job, batch_seconds: f64) -> Result<usize, CliError> {
    let once = batch(f, 1)?.max(1e-9);
    Ok(((batch_seconds / once).ceil() as usize).clamp(1, 100_000))
}

/// Per-round samples of every job. Jobs run back to back within a round
/// so that slow drift in machine speed affects all of them alike.
pub fn round_samples(jobs: &mut [Job], rounds: usize, batch_seconds: f64) -> Result<Vec<Vec<f64>>, CliError> {
    let counts = jobs
        .iter_mut()
        .map(|f| calibrate(f, batch_seconds))
        .collect::<Result<Vec<_>, _>>()?;
    let mut samples = vec![Vec::with_capacity(rounds); jobs.len()];
    for _ in 0..rounds.max(1) {
        for ((f, &c), out) in jobs.iter_mut().zip(&counts).zip(samples.iter_mut()) {
            out.push(batch(f, c)?);
        }
    }
    Ok(samples)
}

pub fn median_seconds<F: FnMut() -> Result<(), CliError>>(
    f: F,
    rounds: usize,
    batch_seconds: f64,
) -> Result<f64, CliError> {
    let s = round_samples(&mut [Box::new(f) as Job], rounds, batch_seconds)?;
    Ok(Stats::of(&s[0]).median)
}

/// Retarded Bethe problem with `n` points, as timed by the sweep.
pub fn bench_problem(
    n: usize,
    dt: f64,
    p: usize,
    base_size: Option<usize>,
) -> Result<ProblemDef<f64, RetardedBethe>, CliError> {
    let mut prob = bethe_retarded_problem(1.0, dt, n, p);
    prob.base_size = base_size;
    prob.validate()?;
    Ok(prob)
}

/// Timings per N plus the per-round raw samples used for doubling ratios.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub timings: Vec<Timing>,
    pub fast_rounds: Vec<Vec<f64>>,
}

pub fn sweep(args: &BenchArgs) -> Result<Sweep, CliError> {
    let ns: Vec<usize> = if args.n_list.is_empty() {
        if args.min_exp > args.max_exp || args.max_exp > 30 {
            return Err(CliError::Validation(format!(
                "bad exponent range {}..={}",
                args.min_exp, args.max_exp
            )));
        }
        (args.min_exp..=args.max_exp).map(|e| 1usize << e).collect()
    } else {
        args.n_list.clone()
    };
    if ns.iter().any(|&n| n < 2) {
        return Err(CliError::Validation("every N must be at least 2".into()));
    }
    if !(args.batch_seconds >= 0.0) {
        return Err(CliError::Validation("--batch-seconds must be non-negative".into()));
    }
    for &n in &ns {
        check_memory(n, 1, 1, &args.output)?;
    }
    let probs = ns
        .iter()
        .map(|&n| bench_problem(n, args.dt, args.p, args.base_size))
        .collect::<Result<Vec<_>, _>>()?;
    let mut jobs: Vec<Job> = Vec::new();
    let mut slots = Vec::new();
    for (prob, &n) in probs.iter().zip(&ns) {
        let modes: &[Mode] = if n <= args.direct_max {
            &[Mode::Fast, Mode::Direct]
        } else {
            &[Mode::Fast]
        };
        let first = jobs.len();
        for &mode in modes {
            jobs.push(Box::new(move || {
                std::hint::black_box(solve(prob, mode)?);
                Ok(())
            }));
        }
        slots.push((first, modes.len() == 2));
    }
    let samples = round_samples(&mut jobs, args.repeats, args.batch_seconds)?;
    let timings = ns
        .iter()
        .zip(&slots)
        .map(|(&n, &(i, direct))| Timing {
            n,
            fast: Stats::of(&samples[i]),
            direct: direct.then(|| Stats::of(&samples[i + 1])),
        })
        .collect();
    let fast_rounds = slots.iter().map(|&(i, _)| samples[i].clone()).collect();
    Ok(Sweep { timings, fast_rounds })
}

/// Ratios `t(2N) / t(N)` for consecutive doublings with `N >= n_min`,
/// each the median over rounds of the within-round ratio.
pub fn doubling_ratios(sw: &Sweep, n_min: usize) -> Vec<(usize, f64)> {
    let t = &sw.timings;
    (1..t.len())
        .filter(|&i| t[i].n == 2 * t[i - 1].n && t[i - 1].n >= n_min)
        .map(|i| {
            let r: Vec<f64> = sw.fast_rounds[i]
                .iter()
                .zip(&sw.fast_rounds[i - 1])
                .map(|(b, a)| b / a)
                .collect();
            (t[i].n, Stats::of(&r).median)
        })
        .collect()
}

pub fn run_bench(args: &BenchArgs) -> Result<Value, CliError> {
    let dir = resolve_dir(&args.output, "bench");
    ensure_dir(&dir)?;
    let t0 = Instant::now();
    let sw = sweep(args)?;
    let rows = &sw.timings;
    write_csv(
        &dir.join("timings.csv"),
        &[
            "n",
            "t_fast_seconds",
            "t_direct_seconds",
            "ratio",
            "nlog2n_coeff",
            "fast_rel_spread",
            "direct_rel_spread",
        ],
        rows.iter().map(|r| {
            vec![
                Cell::U(r.n),
                Cell::F(r.fast.median),
                r.direct.map_or(Cell::Empty, |d| Cell::F(d.median)),
                r.direct.map_or(Cell::Empty, |d| Cell::F(d.median / r.fast.median)),
                Cell::F(r.nlog2n_coeff()),
                Cell::F(r.fast.rel_spread()),
                r.direct.map_or(Cell::Empty, |d| Cell::F(d.rel_spread())),
            ]
        }),
    )?;
    let ratios = doubling_ratios(&sw, 1 << 14);
    let crossover = rows.iter().find(|r| r.fast_not_slower() == Some(true)).map(|r| r.n);
    let at_256 = rows.iter().find(|r| r.n == 256).and_then(Timing::fast_not_slower);
    let results = json!({
        "doubling_ratios_from_2_14": ratios,
        "max_doubling_ratio": ratios.iter().map(|r| r.1).fold(f64::NAN, f64::max),
        "first_n_fast_not_slower": crossover,
        "fast_not_slower_at_256": at_256,
    });
    write_meta(
        &dir,
        &Meta {
            command: "bench",
            version: VERSION,
            status: "ok",
            config: args,
            derived: json!({ "problem": "bethe retarded, c = 1" }),
            results: results.clone(),
            wall_seconds: json!({ "total": t0.elapsed().as_secs_f64() }),
            iterations: None,
        },
    )?;
    Ok(results)
}

#[derive(Debug, Clone, Copy)]
pub struct ConvRow {
    pub dt: f64,
    pub p: usize,
    pub max_err: f64,
    pub order: Option<f64>,
}

pub fn convergence_rows(args: &ConvergenceArgs) -> Result<Vec<ConvRow>, CliError> {
    if args.dt_list.is_empty() || args.p_list.is_empty() || !(args.tmax > 0.0) {
        return Err(CliError::Validation(
            "need non-empty --p-list, --dt-list and tmax > 0".into(),
        ));
    }
    let mut out = Vec::new();
    for &p in &args.p_list {
        let mut prev: Option<(f64, f64)> = None;
        for &dt in &args.dt_list {
            if !(dt > 0.0) {
                return Err(CliError::Validation(format!("dt must be positive, got {dt}")));
            }
            let n = (args.tmax / dt).round() as usize + 1;
            check_memory(n, 1, 1, &args.output)?;
            let prob = bethe_retarded_problem(args.c, dt, n, p);
            let traj = solve(&prob, Mode::from(args.mode))?;
            let gr = retarded_from_trajectory(&traj, args.h);
            let err = gr
                .iter()
                .enumerate()
                .map(|(i, g)| (g - bethe_gr_exact(i as f64 * dt, args.c, args.h)).norm())
                .fold(0.0, f64::max);
            let order = prev.map(|(pd, pe)| (pe / err).ln() / (pd / dt).ln());
            out.push(ConvRow {
                dt,
                p,
                max_err: err,
                order,
            });
            prev = Some((dt, err));
        }
    }
    Ok(out)
}

/// Orders from pairs whose finer error stays above [`ORDER_FLOOR`].
pub fn resolved_orders(rows: &[ConvRow], p: usize) -> Vec<f64> {
    rows.iter()
        .filter(|r| r.p == p && r.max_err > ORDER_FLOOR)
        .filter_map(|r| r.order)
        .collect()
}

pub fn run_convergence(args: &ConvergenceArgs) -> Result<Value, CliError> {
    let dir = resolve_dir(&args.output, "convergence");
    ensure_dir(&dir)?;
    let t0 = Instant::now();
    let rows = convergence_rows(args)?;
    write_csv(
        &dir.join("convergence.csv"),
        &["dt", "p", "max_err", "observed_order"],
        rows.iter().map(|r| {
            vec![
                Cell::F(r.dt),
                Cell::U(r.p),
                Cell::F(r.max_err),
                r.order.map_or(Cell::Empty, Cell::F),
            ]
        }),
    )?;
    let per_p: serde_json::Map<String, Value> = args
        .p_list
        .iter()
        .map(|&p| (p.to_string(), json!(resolved_orders(&rows, p))))
        .collect();
    let results = json!({ "resolved_orders": per_p, "order_floor": ORDER_FLOOR });
    write_meta(
        &dir,
        &Meta {
            command: "convergence",
            version: VERSION,
            status: "ok",
            config: args,
            derived: json!({ "problem": "bethe retarded" }),
            results: results.clone(),
            wall_seconds: json!({ "total": t0.elapsed().as_secs_f64() }),
            iterations: None,
        },
    )?;
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(t: f64) -> Stats {
        Stats {
            median: t,
            q1: t,
            q3: t,
        }
    }

    #[test]
    fn doubling_ratio_selection() {
        let ns = [1usize << 13, 1 << 14, 1 << 15, 1 << 17];
        let fast_rounds = vec![
            vec![1.0, 1.0, 1.0],
            vec![2.0, 2.0, 2.0],
            vec![4.4, 4.0, 5.0],
            vec![20.0; 3],
        ];
        let timings = ns
            .iter()
            .zip(&fast_rounds)
            .map(|(&n, r)| Timing {
                n,
                fast: Stats::of(r),
                direct: None,
            })
            .collect();
        let r = doubling_ratios(&Sweep { timings, fast_rounds }, 1 << 14);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].0, 1 << 15);
        assert!((r[0].1 - 2.2).abs() < 1e-12);
    }

    #[test]
    fn orders_skip_floor() {
        let rows = [
            ConvRow {
                dt: 0.2,
                p: 4,
                max_err: 1e-4,
                order: None,
            },
            ConvRow {
                dt: 0.1,
                p: 4,
                max_err: 6.25e-6,
                order: Some(4.0),
            },
            ConvRow {
                dt: 0.05,
                p: 4,
                max_err: 1e-15,
                order: Some(32.0),
            },
        ];
        assert_eq!(resolved_orders(&rows, 4), vec![4.0]);
        assert!(resolved_orders(&rows, 2).is_empty());
    }

    #[test]
    fn median_is_robust() {
        let mut calls = 0;
        let m = median_seconds(
            || {
                calls += 1;
                Ok(())
            },
            7,
            0.0,
        )
        .unwrap();
        assert_eq!(calls, 8);
        assert!(m >= 0.0);
    }

    #[test]
    fn quartiles_and_noise_allowance() {
        let s = Stats::of(&[5.0, 1.0, 3.0, 2.0, 4.0]);
        assert_eq!((s.q1, s.median, s.q3), (2.0, 3.0, 4.0));
        assert!((s.rel_spread() - 1.0 / 3.0).abs() < 1e-15);
        let slower = Timing {
            n: 256,
            fast: Stats {
                median: 1.1,
                q1: 1.0,
                q3: 1.2,
            },
            direct: Some(flat(1.0)),
        };
        assert_eq!(slower.fast_not_slower(), Some(false));
        let noisy = Timing {
            n: 256,
            fast: Stats {
                median: 1.05,
                q1: 0.9,
                q3: 1.2,
            },
            direct: Some(flat(1.0)),
        };
        assert_eq!(noisy.fast_not_slower(), Some(true));
    }
}
