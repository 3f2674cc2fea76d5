//! Acceptance checks for the solver stack, each against an oracle
//! written here rather than taken from the crates under test.

use std::path::Path;
use std::time::Instant;

use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use fastvie::weights::{ab_weights, am_weights, gregory_weights};
use fastvie::{solve, BlockPlan, HistoryEngine, KernelLayout, Mode, Variant};
use fastvie_cli::args::{BenchArgs, BetheArgs, OutputArgs, SykArgs};
use fastvie_cli::bench::{doubling_ratios, sweep, ORDER_FLOOR};
use fastvie_cli::physics::{run_bethe, run_syk};
use fastvie_greens::dyson::{bethe_retarded_problem, retarded_from_trajectory};
use fastvie_greens::imtime::solve_matsubara;
use fastvie_greens::DlrBasis;

pub struct Line {
    pub pass: bool,
    pub detail: String,
}

fn line(pass: bool, detail: String) -> Line {
    Line { pass, detail }
}

/// `J_1(x)` by Miller's backward recurrence, normalized with
/// `J_0 + 2 sum_k J_{2k} = 1`.
fn bessel_j1(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let top = 2 * ((x + 10.0 * x.cbrt() + 40.0) as usize / 2);
    let (mut next, mut cur) = (0.0f64, 1e-300f64);
    let (mut j1, mut norm) = (0.0, 0.0);
    for k in (1..=top).rev() {
        let prev = 2.0 * k as f64 / x * cur - next;
        next = cur;
        cur = prev;
        // cur now holds J_{k-1}.
        if k - 1 == 1 {
            j1 = cur;
        }
        if k - 1 == 0 {
            norm += cur;
        } else if (k - 1) % 2 == 0 {
            norm += 2.0 * cur;
        }
        if cur.abs() > 1e250 {
            cur *= 1e-250;
            next *= 1e-250;
            j1 *= 1e-250;
            norm *= 1e-250;
        }
    }
    j1 / norm
}

fn bethe_exact(t: f64, c: f64, h: f64) -> C {
    let amp = if t == 0.0 {
        1.0
    } else {
        bessel_j1(2.0 * c * t) / (c * t)
    };
    C::new(0.0, -1.0) * C::from_polar(amp, -h * t)
}

fn semicircle(w: f64, c: f64, h: f64) -> f64 {
    let x = w - h;
    if x.abs() >= 2.0 * c {
        0.0
    } else {
        (4.0 * c * c - x * x).sqrt() / (2.0 * std::f64::consts::PI * c * c)
    }
}

fn read_columns(path: &Path, names: &[&str]) -> Vec<Vec<f64>> {
    let mut rd = csv::Reader::from_path(path).unwrap();
    let hdr = rd.headers().unwrap().clone();
    let idx: Vec<usize> = names
        .iter()
        .map(|n| hdr.iter().position(|h| h == *n).unwrap())
        .collect();
    let mut cols = vec![Vec::new(); names.len()];
    for rec in rd.records() {
        let rec = rec.unwrap();
        for (c, &i) in cols.iter_mut().zip(&idx) {
            c.push(rec[i].parse().unwrap());
        }
    }
    cols
}

fn out_to(dir: &Path) -> OutputArgs {
    OutputArgs {
        out: Some(dir.to_path_buf()),
        ..OutputArgs::default()
    }
}

pub fn fast_summation() -> Line {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for &n in &[129usize, 512, 2048, 4096] {
        for &d in &[1usize, 3] {
            let mut rnd = || C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let k: Vec<Vec<C>> = (0..d).map(|_| (0..n).map(|_| rnd()).collect()).collect();
            let y: Vec<Vec<C>> = (0..d).map(|_| (0..n).map(|_| rnd()).collect()).collect();
            let plan = BlockPlan::for_steps(n, 22, Variant::KernelNonlinear).unwrap();
            let mut eng = HistoryEngine::new(plan, d, KernelLayout::PerComponent).unwrap();
            let mut got = vec![vec![C::new(0.0, 0.0); n]; d];
            for m in 0..n {
                let ym: Vec<C> = y.iter().map(|c| c[m]).collect();
                let km: Vec<C> = k.iter().map(|c| c[m]).collect();
                eng.push_step(&ym, &km).unwrap();
                for (c, v) in eng.finalize_step().unwrap().into_iter().enumerate() {
                    got[c][m] = v;
                }
            }
            for c in 0..d {
                let want: Vec<C> = (0..n).map(|m| (0..=m).map(|j| k[c][m - j] * y[c][j]).sum()).collect();
                let scale = want.iter().map(|v| v.norm()).fold(0.0, f64::max);
                let diff = got[c]
                    .iter()
                    .zip(&want)
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0, f64::max);
                worst = worst.max(diff / scale);
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    line(
        worst <= 1e-12 && secs < 10.0,
        format!("max rel err {worst:.2e} (<= 1e-12), {secs:.2} s (< 10 s)"),
    )
}

fn bethe_error(p: usize, dt: f64, tmax: f64) -> f64 {
    let n = (tmax / dt).round() as usize + 1;
    let traj = solve(&bethe_retarded_problem(1.0, dt, n, p), Mode::Fast).unwrap();
    let gr = retarded_from_trajectory(&traj, -1.0);
    gr.iter()
        .enumerate()
        .map(|(i, g)| (g - bethe_exact(i as f64 * dt, 1.0, -1.0)).norm())
        .fold(0.0, f64::max)
}

pub fn bethe_accuracy() -> Line {
    let t0 = Instant::now();
    let err = bethe_error(8, 1.0 / 64.0, 1000.0);
    let secs = t0.elapsed().as_secs_f64();
    let dts = [0.2, 0.1, 0.05, 0.025, 0.0125];
    let mut orders_ok = true;
    let mut report = Vec::new();
    for p in [2usize, 4, 8] {
        let errs: Vec<f64> = dts.iter().map(|&dt| bethe_error(p, dt, 100.0)).collect();
        let orders: Vec<f64> = (1..dts.len())
            .filter(|&i| errs[i] > ORDER_FLOOR)
            .map(|i| (errs[i - 1] / errs[i]).ln() / (dts[i - 1] / dts[i]).ln())
            .collect();
        orders_ok &= !orders.is_empty() && orders.iter().all(|o| (o - p as f64).abs() <= 0.5);
        let shown: Vec<String> = orders.iter().map(|o| format!("{o:.2}")).collect();
        report.push(format!("p={p}: [{}]", shown.join(", ")));
    }
    line(
        err <= 1e-10 && secs <= 60.0 && orders_ok,
        format!(
            "max err {err:.2e} (<= 1e-10) in {secs:.1} s (<= 60 s); orders {} (nominal +- 0.5)",
            report.join(" ")
        ),
    )
}

pub fn complexity() -> Line {
    let dir = tempfile::tempdir().unwrap();
    let args = BenchArgs {
        output: out_to(dir.path()),
        ..BenchArgs::default()
    };
    let sw = sweep(&args).unwrap();
    let ratios = doubling_ratios(&sw, 1 << 14);
    let max_ratio = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
    let at_256 = sw.timings.iter().find(|t| t.n == 256).unwrap();
    let d = at_256.direct.unwrap();
    let not_slower = at_256.fast_not_slower() == Some(true);
    let spans = ratios.len() == 4;
    let shown: Vec<String> = ratios.iter().map(|r| format!("{:.2}", r.1)).collect();
    line(
        max_ratio <= 2.7 && not_slower && spans,
        format!(
            "doubling ratios 2^14..2^18 [{}] (<= 2.7); N=256 fast {:.3e} s vs direct {:.3e} s +- {:.1}%",
            shown.join(", "),
            at_256.fast.median,
            d.median,
            100.0 * at_256.fast.rel_spread().max(d.rel_spread())
        ),
    )
}

pub fn dlr_bands() -> Line {
    let a = DlrBasis::build(1.0, 40.0, 1e-15).unwrap();
    let b = DlrBasis::build(1.0, 1e5, 1e-10).unwrap();
    let bands = (25..=40).contains(&a.r()) && (80..=110).contains(&b.r());
    let cert = a.cert_residual <= 10.0 * a.eps && b.cert_residual <= 10.0 * b.eps;
    let (beta, h) = (10.0, 0.4);
    let basis = DlrBasis::build(beta, 40.0, 1e-13).unwrap();
    let sol = solve_matsubara(&basis, h, |g| vec![C::new(0.0, 0.0); g.len()], 1.0, 1e-13, 10).unwrap();
    let free = |tau: f64| -(-tau * h).exp() / (1.0 + (-beta * h).exp());
    let free_err = (0..=1000)
        .map(|i| beta * i as f64 / 1000.0)
        .map(|tau| (basis.eval(&sol.g, tau).unwrap() - free(tau)).norm())
        .fold(0.0, f64::max);
    line(
        bands && cert && free_err <= 1e-9,
        format!(
            "r = {} (25..40), r = {} (80..110); certification {:.1e} / {:.1e} (<= 10 eps); free fermion err {free_err:.1e} (<= 1e-9)",
            a.r(),
            b.r(),
            a.cert_residual,
            b.cert_residual
        ),
    )
}

pub fn mixed_consistency() -> Line {
    let dir = tempfile::tempdir().unwrap();
    let args = BetheArgs {
        output: out_to(dir.path()),
        ..BetheArgs::default()
    };
    let res = run_bethe(&args).unwrap();
    let f = |k: &str| res[k].as_f64().unwrap();
    let diff = f("mixed_vs_retarded");
    let boundary = f("matsubara_boundary_defect").abs();
    let gr0 = (C::new(f("gr0_re"), f("gr0_im")) - C::new(0.0, -1.0)).norm();
    let cols = read_columns(&dir.path().join("spectral.csv"), &["omega", "a"]);
    let (c, h) = (args.c, args.h);
    let interior = cols[0]
        .iter()
        .zip(&cols[1])
        .filter(|(w, _)| (*w - h).abs() <= 1.8 * c)
        .map(|(&w, &a)| (a - semicircle(w, c, h)).abs())
        .fold(0.0, f64::max);
    line(
        diff <= 1e-8 && boundary <= 1e-9 && gr0 <= 1e-9 && interior <= 1e-3,
        format!(
            "mixed vs retarded {diff:.1e} (<= 1e-8); |G(0)+G(beta)+1| {boundary:.1e}, |G^R(0)+i| {gr0:.1e} (<= 1e-9); semicircle interior {interior:.1e} (<= 1e-3)"
        ),
    )
}

/// Least-squares slope of `log y` against `log t` over `[t0, t1]`.
fn loglog_slope(t: &[f64], y: &[f64], t0: f64, t1: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter(|(&a, &b)| a >= t0 && a <= t1 && b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 10 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / n,
        pts.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

pub fn syk() -> Line {
    let dir = tempfile::tempdir().unwrap();
    let t0 = Instant::now();
    let args = SykArgs {
        output: out_to(dir.path()),
        ..SykArgs::default()
    };
    let res = run_syk(&args).unwrap();
    let secs = t0.elapsed().as_secs_f64();

    let sp = read_columns(&dir.path().join("spectral.csv"), &["omega", "a"]);
    let dw = sp[0][1] - sp[0][0];
    let mut asym: f64 = 0.0;
    for (i, &w) in sp[0].iter().enumerate() {
        let j = ((-w - sp[0][0]) / dw).round();
        if j >= 0.0 && (j as usize) < sp[0].len() && (sp[0][j as usize] + w).abs() < 1e-9 * dw.max(1.0) {
            asym = asym.max((sp[1][i] - sp[1][j as usize]).abs());
        }
    }
    let sum_rule = (res["sum_rule"].as_f64().unwrap() - 1.0).abs();

    let decay = read_columns(&dir.path().join("decay.csv"), &["t", "abs_gr"]);
    let tmax = *decay[0].last().unwrap();
    let mut window = None;
    let mut start: f64 = 2.0;
    while 10.0 * start <= tmax {
        if let Some(s) = loglog_slope(&decay[0], &decay[1], start, 10.0 * start) {
            if (s + 0.5).abs() <= 0.1 {
                window = Some((start, s));
                break;
            }
        }
        start *= 1.1;
    }

    let meta: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("meta.json")).unwrap()).unwrap();
    let iters: Vec<usize> = meta["iterations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap() as usize)
        .collect();
    let max_iter = iters.iter().skip(101).copied().max().unwrap_or(0);

    let window_text = match window {
        Some((a, s)) => format!("slope {s:.3} on [{a:.2}, {:.2}]", 10.0 * a),
        None => "no decade with slope -0.5 +- 0.1".into(),
    };
    line(
        asym <= 1e-6 && sum_rule <= 1e-3 && window.is_some() && max_iter <= 3 && secs <= 600.0,
        format!(
            "asymmetry {asym:.1e} (<= 1e-6); sum rule err {sum_rule:.1e} (<= 1e-3); {window_text}; max iterations after step 100: {max_iter} (<= 3); {secs:.1} s (<= 600 s)"
        ),
    )
}

pub fn weights() -> Line {
    let mut greg_worst: f64 = 0.0;
    let mut greg_fail = Vec::new();
    for q in 1..=7usize {
        let mu = gregory_weights::<f64>(q).unwrap();
        let mut worst: f64 = 0.0;
        for n in 2 * q..=2 * q + 20 {
            for j in 0..=q as i32 {
                let f = |m: usize| (m as f64).powi(j);
                let rule: f64 = (0..=n).map(f).sum::<f64>() + (0..q).map(|m| mu[m] * (f(m) + f(n - m))).sum::<f64>();
                let exact = (n as f64).powi(j + 1) / (j + 1) as f64;
                worst = worst.max((rule - exact).abs() / exact);
            }
        }
        if worst > 1e-12 {
            greg_fail.push(q);
        }
        greg_worst = greg_worst.max(worst);
    }
    let mut adams_worst: f64 = 0.0;
    for p in 1..=8usize {
        let am = am_weights::<f64>(p).unwrap();
        let ab = ab_weights::<f64>(p).unwrap();
        let n = p + 3;
        for j in 0..p as i32 {
            let f = |m: usize| (m as f64).powi(j);
            let exact = ((n + 1) as f64).powi(j + 1) / (j + 1) as f64 - (n as f64).powi(j + 1) / (j + 1) as f64;
            let am_step: f64 = (0..p).map(|i| am[i] * f(n + 1 - i)).sum();
            let ab_step: f64 = (0..p).map(|i| ab[i] * f(n - i)).sum();
            adams_worst = adams_worst
                .max((am_step - exact).abs() / exact)
                .max((ab_step - exact).abs() / exact);
        }
    }
    let greg_text = if greg_fail.is_empty() {
        "all q".to_string()
    } else {
        format!("inexact at degree q for q = {greg_fail:?}")
    };
    line(
        greg_worst <= 1e-12 && adams_worst <= 1e-12,
        format!("Gregory degree <= q, q <= 7: worst rel err {greg_worst:.1e}, {greg_text}; AM/AB degree < p: {adams_worst:.1e} (<= 1e-12)"),
    )
}

pub type Check = fn() -> Line;

pub const CRITERIA: [(&str, Check); 7] = [
    ("fast summation equals direct sums", fast_summation),
    ("Bethe retarded accuracy and orders", bethe_accuracy),
    ("complexity scaling", complexity),
    ("DLR rank bands", dlr_bands),
    ("mixed formalism consistency", mixed_consistency),
    ("SYK desk scale", syk),
    ("quadrature and multistep weights", weights),
];
