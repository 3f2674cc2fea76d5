//! Implicit Adams-Moulton stepping for
//! `i y_j' + int_0^t k_j(y(t - t'), t - t') y_j(t') dt' = f_j(y(t), t)`.
//!
//! History integrals use the Gregory-corrected sum
//! `S^n = dt (s^n + sum_{m<q} mu_m (k^{n-m} y^m + k^m y^{n-m}))`.
//! Terms of `S^{n+1}` containing `y^{n+1}` or `k^{n+1}` are split off and
//! solved for by fixed-point iteration from an Adams-Bashforth predictor.
//! The remaining truncated sum `sum_{m=1}^{n} k^{n+1-m} y^m` comes from a
//! [`HistoryEngine`] fed the shifted sequences `(y_{i+1}, k_{i+1})`.
//! Steps `1 .. p-1` are bootstrapped by Richardson extrapolation of the
//! trapezoidal method on successively halved steps.

use num_traits::Zero;

use crate::blockplan::{default_base_size, BlockPlan, Variant};
use crate::error::{Error, Result};
use crate::history::{HistoryEngine, KernelLayout};
use crate::scalar::{imag_unit, Cplx, Real};
use crate::weights::{ab_weights, WeightTable};

/// Right-hand side of the equation. Both callbacks must be pure.
pub trait Model<T: Real> {
    /// Number of components `d`.
    fn dim(&self) -> usize;

    fn layout(&self) -> KernelLayout {
        KernelLayout::PerComponent
    }

    /// Kernel values at lag `t` given `y(t)`: `d` values, or one for
    /// [`KernelLayout::Shared`].
    fn kernel(&self, y: &[Cplx<T>], t: T, out: &mut [Cplx<T>]);

    /// Source values `f_j(y(t), t)`.
    fn source(&self, y: &[Cplx<T>], t: T, out: &mut [Cplx<T>]);
}

impl<T: Real, M: Model<T> + ?Sized> Model<T> for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn layout(&self) -> KernelLayout {
        (**self).layout()
    }
    fn kernel(&self, y: &[Cplx<T>], t: T, out: &mut [Cplx<T>]) {
        (**self).kernel(y, t, out)
    }
    fn source(&self, y: &[Cplx<T>], t: T, out: &mut [Cplx<T>]) {
        (**self).source(y, t, out)
    }
}

/// Closure-backed [`Model`].
pub struct FnModel<K, F> {
    pub dim: usize,
    pub layout: KernelLayout,
    pub kernel: K,
    pub source: F,
}

impl<T, K, F> Model<T> for FnModel<K, F>
where
    T: Real,
    K: Fn(&[Cplx<T>], T, &mut [Cplx<T>]),
    F: Fn(&[Cplx<T>], T, &mut [Cplx<T>]),
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn layout(&self) -> KernelLayout {
        self.layout
    }
    fn kernel(&self, y: &[Cplx<T>], t: T, out: &mut [Cplx<T>]) {
        (self.kernel)(y, t, out)
    }
    fn source(&self, y: &[Cplx<T>], t: T, out: &mut [Cplx<T>]) {
        (self.source)(y, t, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Blocked-FFT history sums.
    Fast,
    /// Direct `O(n)` history sums per step.
    Direct,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Fast => "fast",
            Mode::Direct => "direct",
        }
    }
}

/// One instance of the equation plus discretization and solver settings.
#[derive(Debug, Clone)]
pub struct ProblemDef<T: Real, M> {
    pub model: M,
    pub y0: Vec<Cplx<T>>,
    pub dt: T,
    /// Number of time points `t_n = n dt`, `n = 0 .. n_points - 1`.
    pub n_points: usize,
    pub p: usize,
    pub q: usize,
    pub fp_tol: T,
    pub fp_max: usize,
    pub damping: T,
    /// Direct-region size of the block plan; `None` uses `2q + p`.
    pub base_size: Option<usize>,
}

impl<T: Real, M: Model<T>> ProblemDef<T, M> {
    /// Defaults: `q = max(p - 1, 1)`, undamped iteration, tolerance
    /// `max(1e-14, 16 eps)`, at most 50 iterations.
    pub fn new(model: M, y0: Vec<Cplx<T>>, dt: T, n_points: usize, p: usize) -> Self {
        Self {
            model,
            y0,
            dt,
            n_points,
            p,
            q: p.saturating_sub(1).max(1),
            fp_tol: T::of(1e-14).max(T::epsilon() * T::of(16.0)),
            fp_max: 50,
            damping: T::one(),
            base_size: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.model.dim();
        let bad = |m: String| Err(Error::Parameter(m));
        if d == 0 {
            return bad("model has no components".into());
        }
        if self.y0.len() != d {
            return Err(Error::Dimension(format!(
                "y0 has {} entries for d = {d}",
                self.y0.len()
            )));
        }
        if self.p < 2 || self.p > 8 || !self.p.is_multiple_of(2) {
            return bad(format!("order p must be even and in 2..=8, got {}", self.p));
        }
        if self.q < 1 || self.q > 8 {
            return bad(format!("Gregory q must lie in 1..=8, got {}", self.q));
        }
        if !(self.dt > T::zero()) || !self.dt.is_finite() {
            return bad(format!("time step must be positive, got {}", self.dt));
        }
        if self.n_points == 0 {
            return bad("need at least one time point".into());
        }
        if !(self.fp_tol > T::zero()) {
            return bad(format!("fixed-point tolerance must be positive, got {}", self.fp_tol));
        }
        if self.fp_max == 0 {
            return bad("fp_max must be at least 1".into());
        }
        if !(self.damping > T::zero() && self.damping <= T::one()) {
            return bad(format!("damping must lie in (0, 1], got {}", self.damping));
        }
        Ok(())
    }

    fn tracks(&self) -> usize {
        match self.model.layout() {
            KernelLayout::PerComponent => self.model.dim(),
            KernelLayout::Shared => 1,
        }
    }
}

/// Solution on the uniform grid, row-major by time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    pub d: usize,
    pub tracks: usize,
    pub dt: T,
    pub y: Vec<Cplx<T>>,
    pub k: Vec<Cplx<T>>,
    /// Fixed-point iterations per step (0 for bootstrapped steps).
    pub iterations: Vec<usize>,
}

impl<T: Real> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn y_at(&self, n: usize) -> &[Cplx<T>] {
        &self.y[n * self.d..(n + 1) * self.d]
    }

    pub fn k_at(&self, n: usize) -> &[Cplx<T>] {
        &self.k[n * self.tracks..(n + 1) * self.tracks]
    }

    pub fn component(&self, j: usize) -> Vec<Cplx<T>> {
        (0..self.len()).map(|n| self.y[n * self.d + j]).collect()
    }

    pub fn time(&self, n: usize) -> T {
        T::of_usize(n) * self.dt
    }
}

/// `S^n = dt (s^n + sum_{m<q} mu_m (k^{n-m} y^m + k^m y^{n-m}))` for one
/// component, where `s_n` is the plain history sum.
pub fn corrected_sum<T: Real>(
    s_n: Cplx<T>,
    k: &[Cplx<T>],
    y: &[Cplx<T>],
    n: usize,
    greg: &[T],
    dt: T,
) -> Result<Cplx<T>> {
    let q = greg.len();
    if n < 2 * q {
        return Err(Error::Startup { n, min: 2 * q });
    }
    if k.len() <= n || y.len() <= n {
        return Err(Error::Dimension(format!("histories shorter than step {n}")));
    }
    let c = greg.iter().enumerate().fold(Cplx::zero(), |a, (m, &w)| {
        a + (k[n - m] * y[m] + k[m] * y[n - m]).scale(w)
    });
    Ok((s_n + c).scale(dt))
}

/// Full history indexed `[n * width + j]` for steps `0 ..= n`.
struct Hist<T: Real> {
    width: usize,
    data: Vec<Cplx<T>>,
}

impl<T: Real> Hist<T> {
    fn with_capacity(width: usize, steps: usize) -> Self {
        Self {
            width,
            data: Vec::with_capacity(width * steps),
        }
    }
    fn at(&self, n: usize, j: usize) -> Cplx<T> {
        self.data[n * self.width + j]
    }
    fn row(&self, n: usize) -> &[Cplx<T>] {
        &self.data[n * self.width..(n + 1) * self.width]
    }
    fn push(&mut self, v: &[Cplx<T>]) {
        self.data.extend_from_slice(v);
    }
    fn steps(&self) -> usize {
        self.data.len() / self.width
    }
}

struct StepOut<T: Real> {
    y: Vec<Cplx<T>>,
    k: Vec<Cplx<T>>,
    f: Vec<Cplx<T>>,
    s: Vec<Cplx<T>>,
    iterations: usize,
}

/// Shared machinery for one implicit step `n -> n + 1` at spacing `h`.
struct Stepper<'a, T: Real, M: Model<T>> {
    prob: &'a ProblemDef<T, M>,
    w: WeightTable<T>,
    // Adams-Bashforth tables of orders 1 ..= p for the predictor.
    ab: Vec<Vec<T>>,
    h: T,
    d: usize,
    tracks: usize,
}

impl<'a, T: Real, M: Model<T>> Stepper<'a, T, M> {
    fn new(prob: &'a ProblemDef<T, M>, p: usize, q: usize, h: T) -> Result<Self> {
        Ok(Self {
            prob,
            w: WeightTable::new(p, q)?,
            ab: (1..=p).map(ab_weights).collect::<Result<_>>()?,
            h,
            d: prob.model.dim(),
            tracks: prob.tracks(),
        })
    }

    fn track(&self, j: usize) -> usize {
        if self.tracks == 1 {
            0
        } else {
            j
        }
    }

    /// `g[l-1]` holds `f^{n+1-l} - S^{n+1-l}` for `l = 1 ..= available`.
    fn step(&self, n: usize, y: &Hist<T>, k: &Hist<T>, g: &[Vec<Cplx<T>>], sbar_raw: &[Cplx<T>]) -> Result<StepOut<T>> {
        let (d, h) = (self.d, self.h);
        let w = &self.w;
        let i = imag_unit::<T>();
        let t1 = T::of_usize(n + 1) * h;
        let mu0 = w.am[0];
        let g0 = T::one() + w.greg[0];
        let y0 = y.row(0);
        let k0 = k.row(0);

        let mut sbar = vec![Cplx::zero(); d];
        let mut cst = vec![Cplx::zero(); d];
        let mut coef = vec![Cplx::zero(); d];
        let ih = i.scale(h);
        let ih2 = i.scale(h * h * mu0 * g0);
        for j in 0..d {
            let kt = self.track(j);
            let mut acc = sbar_raw[j];
            for (m, &wm) in w.greg.iter().enumerate().skip(1) {
                acc += (k.at(n + 1 - m, kt) * y.at(m, j) + k.at(m, kt) * y.at(n + 1 - m, j)).scale(wm);
            }
            sbar[j] = acc.scale(h);
            let mut c = y.at(n, j) + ih.scale(mu0) * sbar[j];
            for (l, &wl) in w.am.iter().enumerate().skip(1) {
                c -= ih.scale(wl) * g[l - 1][j];
            }
            cst[j] = c;
            coef[j] = Cplx::new(T::one(), T::zero()) - ih2 * k0[kt];
        }

        // Predictor: Adams-Bashforth of the highest order the history allows.
        let order = g.len().min(self.ab.len());
        let ab = &self.ab[order - 1];
        let mut cur: Vec<Cplx<T>> = (0..d)
            .map(|j| {
                let mut v = y.at(n, j);
                for (l, &wl) in ab.iter().enumerate() {
                    v -= ih.scale(wl) * g[l][j];
                }
                v
            })
            .collect();

        let model = &self.prob.model;
        let alpha = self.prob.damping;
        let mut kv = vec![Cplx::zero(); self.tracks];
        let mut fv = vec![Cplx::zero(); d];
        let mut iterations = 0;
        let mut residual = T::infinity();
        while iterations < self.prob.fp_max {
            iterations += 1;
            model.kernel(&cur, t1, &mut kv);
            model.source(&cur, t1, &mut fv);
            residual = T::zero();
            for j in 0..d {
                let phi = (cst[j] + ih2 * kv[self.track(j)] * y0[j] - ih.scale(mu0) * fv[j]) / coef[j];
                let next = cur[j].scale(T::one() - alpha) + phi.scale(alpha);
                let delta = (next - cur[j]).norm();
                if delta > residual || delta.is_nan() {
                    residual = delta;
                }
                cur[j] = next;
            }
            if !residual.is_finite() {
                break;
            }
            if residual < self.prob.fp_tol {
                model.kernel(&cur, t1, &mut kv);
                model.source(&cur, t1, &mut fv);
                let s = (0..d)
                    .map(|j| sbar[j] + (kv[self.track(j)] * y0[j] + k0[self.track(j)] * cur[j]).scale(h * g0))
                    .collect();
                return Ok(StepOut {
                    y: cur,
                    k: kv,
                    f: fv,
                    s,
                    iterations,
                });
            }
        }
        Err(Error::NoConvergence {
            step: n + 1,
            iterations,
            residual: residual.to_f64().unwrap_or(f64::NAN),
        })
    }
}

/// Values at the first `p` grid points `0 .. p-1`.
#[derive(Debug, Clone)]
pub struct Bootstrap<T: Real> {
    pub y: Vec<Vec<Cplx<T>>>,
    pub k: Vec<Vec<Cplx<T>>>,
    pub f: Vec<Vec<Cplx<T>>>,
    pub s: Vec<Vec<Cplx<T>>>,
}

/// Trapezoidal runs with steps `dt / 2^j`, `j < p/2`, to `(p-1) dt`, with
/// direct history sums, Richardson-extrapolated to order `p` at the coarse
/// nodes.
pub fn bootstrap_richardson<T: Real, M: Model<T>>(prob: &ProblemDef<T, M>) -> Result<Bootstrap<T>> {
    prob.validate()?;
    let p = prob.p;
    let levels = p / 2;
    let (d, tracks) = (prob.model.dim(), prob.tracks());
    let nodes = p.min(prob.n_points);
    // table[level][node] = (y, f, S)
    let mut table: Vec<Vec<[Vec<Cplx<T>>; 3]>> = Vec::with_capacity(levels);
    for level in 0..levels {
        let refine = 1usize << level;
        let h = prob.dt / T::of_usize(refine);
        let steps = (nodes - 1) * refine;
        let st = Stepper::new(prob, 2, 1, h)?;
        let mut y = Hist::with_capacity(d, steps + 1);
        let mut k = Hist::with_capacity(tracks, steps + 1);
        let mut f_row = vec![Cplx::zero(); d];
        let mut k_row = vec![Cplx::zero(); tracks];
        y.push(&prob.y0);
        prob.model.kernel(&prob.y0, T::zero(), &mut k_row);
        prob.model.source(&prob.y0, T::zero(), &mut f_row);
        k.push(&k_row);
        let zero = vec![Cplx::zero(); d];
        let mut samples = vec![[prob.y0.clone(), f_row.clone(), zero.clone()]];
        let mut g_hist: Vec<Vec<Cplx<T>>> = vec![f_row.clone()];
        for n in 0..steps {
            let sbar_raw: Vec<Cplx<T>> = (0..d)
                .map(|j| {
                    let kt = st.track(j);
                    (1..=n).fold(Cplx::zero(), |a, m| a + k.at(n + 1 - m, kt) * y.at(m, j))
                })
                .collect();
            let g: Vec<Vec<Cplx<T>>> = g_hist.iter().rev().take(2).cloned().collect();
            let out = st.step(n, &y, &k, &g, &sbar_raw)?;
            y.push(&out.y);
            k.push(&out.k);
            let gn: Vec<Cplx<T>> = (0..d).map(|j| out.f[j] - out.s[j]).collect();
            g_hist.push(gn);
            if (n + 1) % refine == 0 {
                samples.push([out.y, out.f, out.s]);
            }
        }
        table.push(samples);
    }

    // Neville extrapolation in h^2: T_{j,l} = T_{j,l-1} + (T_{j,l-1} - T_{j-1,l-1}) / (4^l - 1).
    let extrapolate = |node: usize, which: usize, j: usize| -> Cplx<T> {
        let mut col: Vec<Cplx<T>> = (0..levels).map(|lv| table[lv][node][which][j]).collect();
        for l in 1..levels {
            let fac = T::of_usize((1usize << (2 * l)) - 1);
            for lv in (l..levels).rev() {
                col[lv] = col[lv] + (col[lv] - col[lv - 1]) / fac;
            }
        }
        col[levels - 1]
    };
    let mut out = Bootstrap {
        y: Vec::with_capacity(nodes),
        k: Vec::with_capacity(nodes),
        f: Vec::with_capacity(nodes),
        s: Vec::with_capacity(nodes),
    };
    for node in 0..nodes {
        let y: Vec<Cplx<T>> = (0..d).map(|j| extrapolate(node, 0, j)).collect();
        let f = (0..d).map(|j| extrapolate(node, 1, j)).collect();
        let s = (0..d).map(|j| extrapolate(node, 2, j)).collect();
        let mut kr = vec![Cplx::zero(); tracks];
        prob.model.kernel(&y, T::of_usize(node) * prob.dt, &mut kr);
        out.y.push(y);
        out.k.push(kr);
        out.f.push(f);
        out.s.push(s);
    }
    Ok(out)
}

/// Block plan used by [`solve`] for the truncated sums of a problem.
pub fn plan_for<T: Real, M: Model<T>>(prob: &ProblemDef<T, M>, mode: Mode) -> Result<BlockPlan> {
    let len = prob.n_points.saturating_sub(2).max(1);
    match mode {
        Mode::Direct => Ok(BlockPlan::direct(len, Variant::KernelNonlinear)),
        Mode::Fast => BlockPlan::for_steps(
            len,
            prob.base_size.unwrap_or_else(|| default_base_size(prob.p, prob.q)),
            Variant::KernelNonlinear,
        ),
    }
}

/// Integrates the problem over all `n_points` grid points.
pub fn solve<T: Real, M: Model<T>>(prob: &ProblemDef<T, M>, mode: Mode) -> Result<Trajectory<T>> {
    prob.validate()?;
    if prob.q > prob.p {
        return Err(Error::Parameter(format!("q = {} exceeds p = {}", prob.q, prob.p)));
    }
    let (d, tracks, p, n_pts) = (prob.model.dim(), prob.tracks(), prob.p, prob.n_points);
    let boot = bootstrap_richardson(prob)?;
    let mut y = Hist::with_capacity(d, n_pts);
    let mut k = Hist::with_capacity(tracks, n_pts);
    let mut iterations = vec![0usize; boot.y.len()];
    // g_ring[0] is the newest f - S.
    let mut g_ring: Vec<Vec<Cplx<T>>> = Vec::with_capacity(p);
    for n in 0..boot.y.len() {
        y.push(&boot.y[n]);
        k.push(&boot.k[n]);
        g_ring.insert(0, (0..d).map(|j| boot.f[n][j] - boot.s[n][j]).collect());
    }
    g_ring.truncate(p);

    let mut engine = HistoryEngine::new(plan_for(prob, mode)?, d, prob.model.layout())?;
    let mut sbar = vec![Cplx::zero(); d];
    let limit = n_pts.saturating_sub(2);
    let feed = |engine: &mut HistoryEngine<T>, y: &Hist<T>, k: &Hist<T>, m: usize, out: &mut [Cplx<T>]| -> Result<()> {
        engine.push_step(y.row(m), k.row(m))?;
        engine.finalize_into(out)
    };
    for m in 1..boot.y.len().min(limit + 1) {
        feed(&mut engine, &y, &k, m, &mut sbar)?;
    }

    let st = Stepper::new(prob, p, prob.q, prob.dt)?;
    for n in boot.y.len().saturating_sub(1)..n_pts.saturating_sub(1) {
        if n + 1 < boot.y.len() {
            continue;
        }
        let out = st.step(n, &y, &k, &g_ring, &sbar)?;
        y.push(&out.y);
        k.push(&out.k);
        iterations.push(out.iterations);
        g_ring.pop();
        g_ring.insert(0, (0..d).map(|j| out.f[j] - out.s[j]).collect());
        if n < limit {
            feed(&mut engine, &y, &k, n + 1, &mut sbar)?;
        }
    }
    debug_assert_eq!(y.steps(), n_pts);
    Ok(Trajectory {
        d,
        tracks,
        dt: prob.dt,
        y: y.data,
        k: k.data,
        iterations,
    })
}
