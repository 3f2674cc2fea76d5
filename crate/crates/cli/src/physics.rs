use std::path::Path;
use std::time::Instant;

use num_complex::Complex64 as C;
use serde_json::{json, Value};

use fastvie::stepper::{Model, ProblemDef};
use fastvie::{solve, Mode, Trajectory};
use fastvie_greens::dyson::{
    bethe_gr_exact, bethe_retarded_problem, bethe_semicircle, mixed_problem, recover_components,
    retarded_from_trajectory, spectral_function, MixedGreens, ModelKind, SpectralData,
};
use fastvie_greens::imtime::{solve_matsubara, DlrBasis, ImTimeFn};

use crate::args::{parse_taper, BasisArgs, BetheArgs, FreeArgs, Grid, OutputArgs, SolverArgs, SpectralArgs, SykArgs};
use crate::output::{ensure_dir, resolve_dir, write_csv, write_meta, Cell, Meta, VERSION};
use crate::CliError;

/// Bytes held by the stepper and history engine for `n` steps of `d`
/// components and `tracks` kernel tracks.
pub fn history_bytes(n: usize, d: usize, tracks: usize) -> usize {
    n.saturating_mul(d + tracks).saturating_mul(16 * 6)
}

pub fn check_memory(n: usize, d: usize, tracks: usize, out: &OutputArgs) -> Result<(), CliError> {
    let need = history_bytes(n, d, tracks);
    let cap = out.mem_cap_mb.saturating_mul(1 << 20);
    if need > cap {
        return Err(CliError::Validation(format!(
            "estimated history storage {} MiB exceeds --mem-cap-mb {}",
            need >> 20,
            out.mem_cap_mb
        )));
    }
    Ok(())
}

pub fn configure<M: Model<f64>>(mut prob: ProblemDef<f64, M>, s: &SolverArgs) -> Result<ProblemDef<f64, M>, CliError> {
    if let Some(q) = s.q {
        prob.q = q;
    }
    if let Some(tol) = s.fp_tol {
        prob.fp_tol = tol;
    }
    prob.fp_max = s.fp_max;
    prob.damping = s.damping;
    prob.base_size = s.base_size;
    prob.validate()?;
    if prob.q > prob.p {
        return Err(CliError::Validation(format!("q = {} exceeds p = {}", prob.q, prob.p)));
    }
    Ok(prob)
}

pub struct MixedRun {
    pub basis: DlrBasis,
    pub gm: ImTimeFn,
    pub mats_iterations: usize,
    pub traj: Trajectory<f64>,
    pub seconds_imag: f64,
    pub seconds_real: f64,
}

pub struct BasisDefaults {
    pub lambda: f64,
    pub eps: f64,
    pub mix: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn mixed_pipeline(
    kind: ModelKind,
    h: f64,
    beta: f64,
    grid: Grid,
    solver: &SolverArgs,
    basis: &BasisArgs,
    defaults: BasisDefaults,
    out: &OutputArgs,
) -> Result<MixedRun, CliError> {
    let t0 = Instant::now();
    let b = DlrBasis::build(
        beta,
        basis.lambda.unwrap_or(defaults.lambda),
        basis.eps.unwrap_or(defaults.eps),
    )?;
    check_memory(grid.n_points, b.r(), 1, out)?;
    let mix = basis.mix.unwrap_or(defaults.mix);
    let sol = solve_matsubara(&b, h, kind.matsubara_sigma(&b), mix, basis.mats_tol, basis.mats_max)?;
    let seconds_imag = t0.elapsed().as_secs_f64();
    let prob = configure(
        mixed_problem(kind, h, &b, &sol.g, grid.dt, grid.n_points, solver.p)?,
        solver,
    )?;
    let t1 = Instant::now();
    let traj = solve(&prob, Mode::from(solver.mode))?;
    Ok(MixedRun {
        basis: b,
        gm: sol.g,
        mats_iterations: sol.iterations,
        traj,
        seconds_imag,
        seconds_real: t1.elapsed().as_secs_f64(),
    })
}

pub fn max_iterations_after(iters: &[usize], skip: usize) -> usize {
    iters.iter().skip(skip).copied().max().unwrap_or(0)
}

/// Least-squares slopes of `log v` against `log t` over windows
/// `[t0, 10 t0]` with `t0 >= t_min`, stepping `t0` by 10%.
pub fn decade_slopes(ts: &[f64], vals: &[f64], t_min: f64) -> Vec<(f64, f64, f64)> {
    let t_last = ts.last().copied().unwrap_or(0.0);
    let mut out = Vec::new();
    let mut t0 = t_min.max(ts.get(1).copied().unwrap_or(1.0));
    while t0 * 10.0 <= t_last {
        let (mut sx, mut sy, mut sxx, mut sxy, mut k) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&t, &v) in ts.iter().zip(vals) {
            if t >= t0 && t <= 10.0 * t0 && v > 0.0 {
                let (x, y) = (t.ln(), v.ln());
                sx += x;
                sy += y;
                sxx += x * x;
                sxy += x * y;
                k += 1.0;
            }
        }
        if k >= 3.0 {
            out.push((t0, 10.0 * t0, (k * sxy - sx * sy) / (k * sxx - sx * sx)));
        }
        t0 *= 1.1;
    }
    out
}

/// Largest `|A(w) - A(-w)|` over mirrored grid points.
pub fn spectral_asymmetry(sp: &SpectralData) -> f64 {
    if sp.omega.len() < 2 {
        return 0.0;
    }
    let dw = sp.omega[1] - sp.omega[0];
    let idx = |w: f64| (w / dw).round() as i64;
    let lo = idx(sp.omega[0]);
    let mut worst: f64 = 0.0;
    for (i, &w) in sp.omega.iter().enumerate() {
        let j = -idx(w) - lo;
        if j >= 0 && (j as usize) < sp.omega.len() {
            worst = worst.max((sp.a[i] - sp.a[j as usize]).abs());
        }
    }
    worst
}

fn spectral_for(gr: &[C], dt: f64, args: &SpectralArgs, lo: f64, hi: f64) -> Result<SpectralData, CliError> {
    let taper = parse_taper(&args.taper)?;
    Ok(spectral_function(
        gr,
        dt,
        taper,
        args.omega_min.unwrap_or(lo),
        args.omega_max.unwrap_or(hi),
        args.pad,
    )?)
}

fn boundary_defect(b: &DlrBasis, gm: &ImTimeFn) -> Result<f64, CliError> {
    Ok((b.eval(gm, 0.0)? + b.eval(gm, b.beta)? + 1.0).norm())
}

fn stride_rows(n: usize, stride: usize) -> impl Iterator<Item = usize> {
    let s = stride.max(1);
    (0..n).filter(move |i| i % s == 0 || *i == n - 1)
}

fn write_gr_with_exact(
    dir: &Path,
    dt: f64,
    gr: &[C],
    exact: &dyn Fn(f64) -> C,
    stride: usize,
) -> Result<f64, CliError> {
    let mut worst: f64 = 0.0;
    for (n, g) in gr.iter().enumerate() {
        worst = worst.max((g - exact(n as f64 * dt)).norm());
    }
    write_csv(
        &dir.join("gr.csv"),
        &["t", "re_gr", "im_gr", "re_exact", "im_exact", "abs_err"],
        stride_rows(gr.len(), stride).map(|n| {
            let t = n as f64 * dt;
            let e = exact(t);
            vec![
                Cell::F(t),
                Cell::F(gr[n].re),
                Cell::F(gr[n].im),
                Cell::F(e.re),
                Cell::F(e.im),
                Cell::F((gr[n] - e).norm()),
            ]
        }),
    )?;
    Ok(worst)
}

fn gtv_rows(mg: &MixedGreens, rows: usize, taus: usize) -> Result<Vec<Vec<Cell>>, CliError> {
    let b = mg.basis;
    let n = mg.len();
    let rows = rows.clamp(1, n);
    let mut out = Vec::new();
    for i in 0..rows {
        let step = if rows == 1 {
            0
        } else {
            (i * (n - 1) + (rows - 1) / 2) / (rows - 1)
        };
        let f = b.fit(mg.row(step))?;
        for k in 0..taus.max(2) {
            let tau = b.beta * k as f64 / (taus.max(2) - 1) as f64;
            let v = b.eval(&f, tau)?;
            out.push(vec![
                Cell::F(step as f64 * mg.dt),
                Cell::F(tau),
                Cell::F(v.re),
                Cell::F(v.im),
            ]);
        }
    }
    Ok(out)
}

pub fn run_bethe(args: &BetheArgs) -> Result<Value, CliError> {
    if !(args.c >= 0.0) || !(args.beta > 0.0) {
        return Err(CliError::Validation(format!(
            "need c >= 0 and beta > 0, got c={}, beta={}",
            args.c, args.beta
        )));
    }
    let grid = args.time.resolve(Grid {
        dt: 1.0 / 64.0,
        n_points: 64001,
        tmax: 1000.0,
    })?;
    let taper = parse_taper(&args.spectral.taper)?;
    let dir = resolve_dir(&args.output, "bethe");
    ensure_dir(&dir)?;
    let t0 = Instant::now();
    let (c, h) = (args.c, args.h);
    let defaults = BasisDefaults {
        lambda: 40.0,
        eps: 1e-15,
        mix: 0.5,
    };
    let run = mixed_pipeline(
        ModelKind::Bethe { c },
        h,
        args.beta,
        grid,
        &args.solver,
        &args.basis,
        defaults,
        &args.output,
    )?;
    let mg = MixedGreens::from_trajectory(&run.basis, &run.traj, h)?;
    let comp = recover_components(&mg);
    let gr = &comp.retarded;
    let exact = move |t: f64| bethe_gr_exact(t, c, h);
    let max_err = write_gr_with_exact(&dir, grid.dt, gr, &exact, args.output.stride)?;

    let mut retarded = None;
    let t_ret = Instant::now();
    if !args.no_retarded_check {
        let prob = configure(
            bethe_retarded_problem(c, grid.dt, grid.n_points, args.solver.p),
            &args.solver,
        )?;
        let traj = solve(&prob, Mode::from(args.solver.mode))?;
        retarded = Some(retarded_from_trajectory(&traj, h));
    }
    let seconds_retarded = t_ret.elapsed().as_secs_f64();
    let err_rows = stride_rows(gr.len(), args.output.stride).map(|n| {
        let t = n as f64 * grid.dt;
        let e = exact(t);
        let mut row = vec![Cell::F(t), Cell::F((gr[n] - e).norm())];
        match &retarded {
            Some(r) => {
                row.push(Cell::F((r[n] - e).norm()));
                row.push(Cell::F((gr[n] - r[n]).norm()));
            }
            None => row.extend([Cell::Empty, Cell::Empty]),
        }
        row
    });
    write_csv(
        &dir.join("error.csv"),
        &["t", "abs_err_mixed", "abs_err_retarded", "abs_diff_mixed_retarded"],
        err_rows,
    )?;
    let (ret_err, diff) = match &retarded {
        Some(r) => (
            Some(
                r.iter()
                    .enumerate()
                    .map(|(n, g)| (g - exact(n as f64 * grid.dt)).norm())
                    .fold(0.0, f64::max),
            ),
            Some(r.iter().zip(gr).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)),
        ),
        None => (None, None),
    };

    let sp = spectral_for(gr, grid.dt, &args.spectral, h - 2.0 * c - 2.0, h + 2.0 * c + 2.0)?;
    write_csv(
        &dir.join("spectral.csv"),
        &["omega", "a", "a_exact"],
        sp.omega
            .iter()
            .zip(&sp.a)
            .map(|(&w, &a)| vec![Cell::F(w), Cell::F(a), Cell::F(bethe_semicircle(w, c, h))]),
    )?;
    let interior = sp
        .omega
        .iter()
        .zip(&sp.a)
        .filter(|(w, _)| (*w - h).abs() <= 0.9 * 2.0 * c)
        .map(|(&w, &a)| (a - bethe_semicircle(w, c, h)).abs())
        .fold(0.0, f64::max);
    write_csv(
        &dir.join("gtv.csv"),
        &["t", "tau", "re_gtv", "im_gtv"],
        gtv_rows(&mg, args.gtv_times, args.gtv_taus)?,
    )?;

    let results = json!({
        "max_abs_err": max_err,
        "retarded_max_abs_err": ret_err,
        "mixed_vs_retarded": diff,
        "gr0_re": gr[0].re,
        "gr0_im": gr[0].im,
        "matsubara_boundary_defect": boundary_defect(&run.basis, &run.gm)?,
        "spectral_interior_err": interior,
        "sum_rule": sp.integral(),
        "max_iterations_after_100": max_iterations_after(&run.traj.iterations, 100),
        "matsubara_iterations": run.mats_iterations,
        "r": run.basis.r(),
        "cert_residual": run.basis.cert_residual,
    });
    let derived = json!({
        "dt": grid.dt, "n_points": grid.n_points, "tmax": grid.tmax,
        "lambda": run.basis.lambda, "eps": run.basis.eps,
        "freqs": run.basis.freqs, "nodes": run.basis.nodes,
        "taper": taper.describe(),
    });
    write_meta(
        &dir,
        &Meta {
            command: "bethe",
            version: VERSION,
            status: "ok",
            config: args,
            derived,
            results: results.clone(),
            wall_seconds: json!({
                "imaginary_time": run.seconds_imag,
                "real_time": run.seconds_real,
                "retarded_only": seconds_retarded,
                "total": t0.elapsed().as_secs_f64(),
            }),
            iterations: Some(&run.traj.iterations),
        },
    )?;
    Ok(results)
}

pub fn run_syk(args: &SykArgs) -> Result<Value, CliError> {
    if !(args.j >= 0.0) || !(args.beta > 0.0) {
        return Err(CliError::Validation(format!(
            "need J >= 0 and beta > 0, got J={}, beta={}",
            args.j, args.beta
        )));
    }
    let grid = args.time.resolve(Grid {
        dt: 500.0 / 32767.0,
        n_points: 32768,
        tmax: 500.0,
    })?;
    let taper = parse_taper(&args.spectral.taper)?;
    let dir = resolve_dir(&args.output, "syk");
    ensure_dir(&dir)?;
    let t0 = Instant::now();
    let kind = if args.j == 0.0 {
        ModelKind::Free
    } else {
        ModelKind::Syk { j: args.j }
    };
    let defaults = BasisDefaults {
        lambda: 1000.0,
        eps: 1e-12,
        mix: 0.3,
    };
    let run = mixed_pipeline(
        kind,
        args.h,
        args.beta,
        grid,
        &args.solver,
        &args.basis,
        defaults,
        &args.output,
    )?;
    let mg = MixedGreens::from_trajectory(&run.basis, &run.traj, args.h)?;
    let gr = recover_components(&mg).retarded;
    let ts: Vec<f64> = (0..gr.len()).map(|n| n as f64 * grid.dt).collect();
    let abs: Vec<f64> = gr.iter().map(|g| g.norm()).collect();
    write_csv(
        &dir.join("gr.csv"),
        &["t", "re_gr", "im_gr"],
        stride_rows(gr.len(), args.output.stride).map(|n| vec![Cell::F(ts[n]), Cell::F(gr[n].re), Cell::F(gr[n].im)]),
    )?;
    write_csv(
        &dir.join("decay.csv"),
        &["t", "abs_gr"],
        stride_rows(gr.len(), args.output.stride).map(|n| vec![Cell::F(ts[n]), Cell::F(abs[n])]),
    )?;
    let sp = spectral_for(&gr, grid.dt, &args.spectral, args.h - 8.0, args.h + 8.0)?;
    write_csv(
        &dir.join("spectral.csv"),
        &["omega", "a"],
        sp.omega.iter().zip(&sp.a).map(|(&w, &a)| vec![Cell::F(w), Cell::F(a)]),
    )?;
    let t_min = if args.j > 0.0 { 2.0 / args.j } else { 2.0 };
    let slopes = decade_slopes(&ts, &abs, t_min);
    let best = slopes
        .iter()
        .min_by(|a, b| (a.2 + 0.5).abs().partial_cmp(&(b.2 + 0.5).abs()).unwrap())
        .copied();
    let results = json!({
        "gr0_re": gr[0].re,
        "gr0_im": gr[0].im,
        "matsubara_boundary_defect": boundary_defect(&run.basis, &run.gm)?,
        "sum_rule": sp.integral(),
        "spectral_asymmetry": spectral_asymmetry(&sp),
        "decay_window": best.map(|b| vec![b.0, b.1]),
        "decay_slope": best.map(|b| b.2),
        "final_abs_gr": abs.last(),
        "max_iterations_after_100": max_iterations_after(&run.traj.iterations, 100),
        "matsubara_iterations": run.mats_iterations,
        "r": run.basis.r(),
        "cert_residual": run.basis.cert_residual,
    });
    let derived = json!({
        "dt": grid.dt, "n_points": grid.n_points, "tmax": grid.tmax,
        "lambda": run.basis.lambda, "eps": run.basis.eps,
        "freqs": run.basis.freqs, "nodes": run.basis.nodes,
        "taper": taper.describe(),
        "model": kind.name(),
    });
    write_meta(
        &dir,
        &Meta {
            command: "syk",
            version: VERSION,
            status: "ok",
            config: args,
            derived,
            results: results.clone(),
            wall_seconds: json!({
                "imaginary_time": run.seconds_imag,
                "real_time": run.seconds_real,
                "total": t0.elapsed().as_secs_f64(),
            }),
            iterations: Some(&run.traj.iterations),
        },
    )?;
    Ok(results)
}

pub fn run_free(args: &FreeArgs) -> Result<Value, CliError> {
    if !(args.beta > 0.0) {
        return Err(CliError::Validation(format!("need beta > 0, got {}", args.beta)));
    }
    let grid = args.time.resolve(Grid {
        dt: 1.0 / 32.0,
        n_points: 6401,
        tmax: 200.0,
    })?;
    let taper = parse_taper(&args.spectral.taper)?;
    let dir = resolve_dir(&args.output, "free");
    ensure_dir(&dir)?;
    let t0 = Instant::now();
    let h = args.h;
    let defaults = BasisDefaults {
        lambda: 40.0,
        eps: 1e-12,
        mix: 1.0,
    };
    let run = mixed_pipeline(
        ModelKind::Free,
        h,
        args.beta,
        grid,
        &args.solver,
        &args.basis,
        defaults,
        &args.output,
    )?;
    let mg = MixedGreens::from_trajectory(&run.basis, &run.traj, h)?;
    let gr = recover_components(&mg).retarded;
    let exact = move |t: f64| C::new(0.0, -1.0) * C::from_polar(1.0, -h * t);
    let max_err = write_gr_with_exact(&dir, grid.dt, &gr, &exact, args.output.stride)?;
    let sp = spectral_for(&gr, grid.dt, &args.spectral, h - 5.0, h + 5.0)?;
    write_csv(
        &dir.join("spectral.csv"),
        &["omega", "a"],
        sp.omega.iter().zip(&sp.a).map(|(&w, &a)| vec![Cell::F(w), Cell::F(a)]),
    )?;
    let peak = sp
        .omega
        .iter()
        .zip(&sp.a)
        .fold((f64::NAN, f64::MIN), |m, (&w, &a)| if a > m.1 { (w, a) } else { m })
        .0;
    let results = json!({
        "max_abs_err": max_err,
        "gr0_re": gr[0].re,
        "gr0_im": gr[0].im,
        "matsubara_boundary_defect": boundary_defect(&run.basis, &run.gm)?,
        "sum_rule": sp.integral(),
        "spectral_peak": peak,
        "r": run.basis.r(),
    });
    write_meta(
        &dir,
        &Meta {
            command: "free",
            version: VERSION,
            status: "ok",
            config: args,
            derived: json!({ "dt": grid.dt, "n_points": grid.n_points, "tmax": grid.tmax, "taper": taper.describe() }),
            results: results.clone(),
            wall_seconds: json!({ "total": t0.elapsed().as_secs_f64() }),
            iterations: Some(&run.traj.iterations),
        },
    )?;
    Ok(results)
}
