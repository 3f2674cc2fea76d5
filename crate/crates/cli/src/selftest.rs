use num_complex::Complex64 as C;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fastvie::blockplan::{validate_plan, BlockPlan, Variant};
use fastvie::scalar::max_rel_err;
use fastvie::weights::{gregory_exactness_defect, WeightTable};
use fastvie::{direct_sums, solve, HistoryEngine, KernelLayout, Mode};
use fastvie_greens::dyson::{bethe_gr_exact, bethe_retarded_problem, retarded_from_trajectory};
use fastvie_greens::imtime::{free_fermion, solve_matsubara, DlrBasis};

pub type Check = (&'static str, fn() -> Result<String, String>);

pub const CHECKS: &[Check] = &[
    ("fast history sums equal direct sums", fast_vs_direct),
    ("block plans cover the lower triangle causally", plans_valid),
    (
        "Gregory weights exact through degree q-1 (degree q for odd q)",
        gregory_exact,
    ),
    ("Adams weight tables consistent", adams_tables),
    ("retarded free propagator", free_retarded),
    ("free fermion Matsubara solve", free_matsubara),
    ("short Bethe run matches J1 closed form", bethe_short),
];

fn fast_vs_direct() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for &n in &[129usize, 512] {
        for variant in [Variant::KernelNonlinear, Variant::Hls] {
            let plan = BlockPlan::for_steps(n, 12, variant).map_err(|e| e.to_string())?;
            let mut rnd = || C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let k: Vec<C> = (0..n).map(|_| rnd()).collect();
            let y: Vec<C> = (0..n).map(|_| rnd()).collect();
            let want = direct_sums(&k, &y).map_err(|e| e.to_string())?;
            let mut got = vec![C::zero(); n];
            if variant == Variant::Hls {
                let mut eng = HistoryEngine::with_fixed_kernel(plan, 1, KernelLayout::PerComponent, vec![k.clone()])
                    .map_err(|e| e.to_string())?;
                for m in 0..n {
                    eng.push_y(&y[m..=m]).map_err(|e| e.to_string())?;
                    got[m] = eng.finalize_step().map_err(|e| e.to_string())?[0];
                }
            } else {
                let mut eng = HistoryEngine::new(plan, 1, KernelLayout::PerComponent).map_err(|e| e.to_string())?;
                for m in 0..n {
                    eng.push_step(&y[m..=m], &k[m..=m]).map_err(|e| e.to_string())?;
                    got[m] = eng.finalize_step().map_err(|e| e.to_string())?[0];
                }
            }
            worst = worst.max(max_rel_err(&got, &want));
        }
    }
    if worst <= 1e-12 {
        Ok(format!("max rel err {worst:.2e}"))
    } else {
        Err(format!("max rel err {worst:.2e} > 1e-12"))
    }
}

fn plans_valid() -> Result<String, String> {
    let mut count = 0;
    for n in 2..=300 {
        for l in 1..=(n as f64).log2().floor() as usize {
            for v in [Variant::Hls, Variant::KernelNonlinear] {
                let plan = BlockPlan::build(n, l, v).map_err(|e| e.to_string())?;
                let rep = validate_plan(&plan);
                if !rep.failures.is_empty() {
                    return Err(format!("N={n} L={l} {}: {}", v.as_str(), rep.failures[0]));
                }
                count += 1;
            }
        }
    }
    Ok(format!("{count} plans"))
}

fn gregory_exact() -> Result<String, String> {
    for q in 1..=8 {
        let deg = if q % 2 == 1 { q } else { q - 1 };
        let d = gregory_exactness_defect(q, deg as u32, q.saturating_sub(1)..=3 * q + 5).map_err(|e| e.to_string())?;
        if !d.is_zero() {
            return Err(format!("q={q} degree {deg}: defect {d}"));
        }
    }
    Ok("q = 1..=8, exact rational arithmetic".into())
}

fn adams_tables() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for p in (2..=8).step_by(2) {
        let t = WeightTable::<f64>::new(p, p - 1).map_err(|e| e.to_string())?;
        worst = worst.max(t.consistency_defect());
    }
    if worst < 1e-13 {
        Ok(format!("max defect {worst:.2e}"))
    } else {
        Err(format!("defect {worst:.2e}"))
    }
}

fn free_retarded() -> Result<String, String> {
    let h = 0.7;
    let traj = solve(&bethe_retarded_problem(0.0, 0.05, 400, 8), Mode::Fast).map_err(|e| e.to_string())?;
    let gr = retarded_from_trajectory(&traj, h);
    let err = gr
        .iter()
        .enumerate()
        .map(|(n, g)| (g - C::new(0.0, -1.0) * C::from_polar(1.0, -h * n as f64 * 0.05)).norm())
        .fold(0.0, f64::max);
    if err < 1e-12 {
        Ok(format!("max err {err:.2e}"))
    } else {
        Err(format!("max err {err:.2e}"))
    }
}

fn free_matsubara() -> Result<String, String> {
    let b = DlrBasis::build(10.0, 40.0, 1e-13).map_err(|e| e.to_string())?;
    let h = -0.3;
    let sol = solve_matsubara(&b, h, |g| vec![C::zero(); g.len()], 1.0, 1e-13, 5).map_err(|e| e.to_string())?;
    let mut err: f64 = 0.0;
    for i in 0..=400 {
        let tau = b.beta * i as f64 / 400.0;
        let v = b.eval(&sol.g, tau).map_err(|e| e.to_string())?;
        err = err.max((v - free_fermion(tau, h, b.beta)).norm());
    }
    if err < 1e-9 {
        Ok(format!("r = {}, max err {err:.2e}", b.r()))
    } else {
        Err(format!("max err {err:.2e}"))
    }
}

fn bethe_short() -> Result<String, String> {
    let dt = 1.0 / 32.0;
    let traj = solve(&bethe_retarded_problem(1.0, dt, 3201, 8), Mode::Fast).map_err(|e| e.to_string())?;
    let gr = retarded_from_trajectory(&traj, -1.0);
    let err = gr
        .iter()
        .enumerate()
        .map(|(n, g)| (g - bethe_gr_exact(n as f64 * dt, 1.0, -1.0)).norm())
        .fold(0.0, f64::max);
    if err < 1e-10 {
        Ok(format!("max err {err:.2e}"))
    } else {
        Err(format!("max err {err:.2e}"))
    }
}

/// Runs every check, printing one line each. Returns the failing names.
pub fn run_all(list_only: bool) -> Vec<&'static str> {
    let mut failed = Vec::new();
    for (name, f) in CHECKS {
        if list_only {
            println!("{name}");
            continue;
        }
        match f() {
            Ok(msg) => println!("PASS  {name}: {msg}"),
            Err(msg) => {
                println!("FAIL  {name}: {msg}");
                failed.push(*name);
            }
        }
    }
    failed
}
