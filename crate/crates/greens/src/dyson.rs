//! Equilibrium Dyson equations for the Bethe lattice and the SYK model,
//! posed as Volterra problems for the core stepper.
//!
//! The real-time unknown is `y(t) = exp(iht) g(t)`. With that substitution
//! the retarded kernel becomes `k(s) = -exp(ihs) sigma_R(s)` and the source
//! `f(t) = exp(iht) q(t)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C;
use rustfft::FftPlanner;

use fastvie::stepper::{Model, ProblemDef, Trajectory};
use fastvie::weights::gregory_weights;
use fastvie::KernelLayout;

use crate::error::{GreensError, Result};
use crate::imtime::{DlrBasis, ImTimeFn};

const I: C = C { re: 0.0, im: 1.0 };

/// Bessel function of the first kind, order one.
pub fn bessel_j1(x: f64) -> f64 {
    if x < 0.0 {
        return -bessel_j1(-x);
    }
    if x < 4.0 {
        let q = -0.25 * x * x;
        let mut term = 0.5 * x;
        let mut sum = term;
        for k in 1..60 {
            term *= q / (k as f64 * (k + 1) as f64);
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        return sum;
    }
    // Periodic trapezoid rule on (1/2pi) int_0^{2pi} cos(theta - x sin theta),
    // which converges geometrically once the point count exceeds x.
    let m = (x + 30.0 * x.cbrt() + 30.0).ceil() as usize;
    let h = 2.0 * std::f64::consts::PI / m as f64;
    (0..m)
        .map(|i| {
            let th = i as f64 * h;
            (th - x * th.sin()).cos()
        })
        .sum::<f64>()
        / m as f64
}

/// `-i exp(-iht) J1(2ct) / (ct)`, with value `-i` at `t = 0`.
pub fn bethe_gr_exact(t: f64, c: f64, h: f64) -> C {
    let x = c * t;
    let ratio = if x.abs() < 1e-8 {
        1.0 - 0.5 * x * x
    } else {
        bessel_j1(2.0 * x) / x
    };
    -I * C::from_polar(1.0, -h * t) * ratio
}

/// Semicircular density of states of half-width `2c` centred at `h`.
pub fn bethe_semicircle(omega: f64, c: f64, h: f64) -> f64 {
    let d = 4.0 * c * c - (omega - h).powi(2);
    if d <= 0.0 {
        0.0
    } else {
        d.sqrt() / (2.0 * std::f64::consts::PI * c * c)
    }
}

/// Retarded Bethe equation `G_R' = -i h G_R - i c^2 (G_R * G_R)`.
#[derive(Debug, Clone, Copy)]
pub struct RetardedBethe {
    pub c: f64,
}

impl Model<f64> for RetardedBethe {
    fn dim(&self) -> usize {
        1
    }
    fn kernel(&self, y: &[C], _t: f64, out: &mut [C]) {
        out[0] = -self.c * self.c * y[0];
    }
    fn source(&self, _y: &[C], _t: f64, out: &mut [C]) {
        out[0] = C::new(0.0, 0.0);
    }
}

pub fn bethe_retarded_problem(c: f64, dt: f64, n_points: usize, p: usize) -> ProblemDef<f64, RetardedBethe> {
    ProblemDef::new(RetardedBethe { c }, vec![-I], dt, n_points, p)
}

/// `G_R(t_n) = exp(-i h t_n) y_n` for a one-component trajectory.
pub fn retarded_from_trajectory(traj: &Trajectory<f64>, h: f64) -> Vec<C> {
    (0..traj.len())
        .map(|n| C::from_polar(1.0, -h * traj.time(n)) * traj.y_at(n)[0])
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelKind {
    Free,
    Bethe { c: f64 },
    Syk { j: f64 },
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Free => "free",
            ModelKind::Bethe { .. } => "bethe",
            ModelKind::Syk { .. } => "syk",
        }
    }

    /// Mixed self-energy at one `tau` from `G(t, tau)` and `G(t, beta - tau)`.
    pub fn sigma_mixed_at(&self, g: C, g_refl: C) -> C {
        match *self {
            ModelKind::Free => C::new(0.0, 0.0),
            ModelKind::Bethe { c } => g * (c * c),
            ModelKind::Syk { j } => g * g * g_refl.conj() * (j * j),
        }
    }

    /// Matsubara self-energy at one `tau` from `G(tau)` and `G(beta - tau)`.
    pub fn sigma_matsubara_at(&self, g: C, g_refl: C) -> C {
        match *self {
            ModelKind::Free => C::new(0.0, 0.0),
            ModelKind::Bethe { c } => g * (c * c),
            ModelKind::Syk { j } => g * g * g_refl * (j * j),
        }
    }

    /// Node-space Matsubara self-energy map for [`crate::imtime::solve_matsubara`].
    pub fn matsubara_sigma(self, basis: &DlrBasis) -> impl Fn(&[C]) -> Vec<C> {
        let refl = basis.reflect_matrix().map(|v| C::new(v, 0.0));
        move |g: &[C]| {
            let gr = &refl * DVector::from_column_slice(g);
            g.iter()
                .zip(gr.iter())
                .map(|(&a, &b)| self.sigma_matsubara_at(a, b))
                .collect()
        }
    }
}

/// `Sigma(t, tau_j) = J^2 G(t, tau_j)^2 conj(G(t, beta - tau_j))` on the nodes.
pub fn syk_sigma_mixed(row: &[C], basis: &DlrBasis, j: f64) -> Vec<C> {
    let refl = basis.reflect_matrix();
    let kind = ModelKind::Syk { j };
    (0..row.len())
        .map(|i| {
            let gr: C = (0..row.len()).map(|k| row[k] * refl[(i, k)]).sum();
            kind.sigma_mixed_at(row[i], gr)
        })
        .collect()
}

/// `Sigma_R = Sigma_> - Sigma_<` with `Sigma_< = Sigma(t, 0)` and
/// `Sigma_> = -Sigma(t, beta)`.
pub fn retarded_sigma_from_mixed(sigma_at_0: C, sigma_at_beta: C) -> C {
    -(sigma_at_0 + sigma_at_beta)
}

/// Mixed-component equation on the `r` imaginary-time nodes. All
/// components share one scalar retarded kernel.
#[derive(Debug, Clone)]
pub struct MixedModel {
    pub kind: ModelKind,
    pub h: f64,
    e0: Vec<f64>,
    eb: Vec<f64>,
    refl: DMatrix<C>,
    conv: DMatrix<C>,
}

impl MixedModel {
    fn endpoints(&self, g: &[C]) -> (C, C) {
        let dot = |e: &[f64]| e.iter().zip(g).map(|(a, b)| b * *a).sum::<C>();
        (dot(&self.e0), dot(&self.eb))
    }

    /// Retarded self-energy from node values of `G(t, .)`.
    pub fn sigma_retarded(&self, g: &[C]) -> C {
        let (g0, gb) = self.endpoints(g);
        retarded_sigma_from_mixed(self.kind.sigma_mixed_at(g0, gb), self.kind.sigma_mixed_at(gb, g0))
    }

    /// Node values of the mixed self-energy.
    pub fn sigma_nodes(&self, g: &[C]) -> Vec<C> {
        match self.kind {
            ModelKind::Free => vec![C::new(0.0, 0.0); g.len()],
            ModelKind::Bethe { .. } => g.iter().map(|&a| self.kind.sigma_mixed_at(a, a)).collect(),
            ModelKind::Syk { .. } => {
                let gr = &self.refl * DVector::from_column_slice(g);
                g.iter()
                    .zip(gr.iter())
                    .map(|(&a, &b)| self.kind.sigma_mixed_at(a, b))
                    .collect()
            }
        }
    }
}

impl Model<f64> for MixedModel {
    fn dim(&self) -> usize {
        self.e0.len()
    }
    fn layout(&self) -> KernelLayout {
        KernelLayout::Shared
    }
    fn kernel(&self, y: &[C], t: f64, out: &mut [C]) {
        let ph = C::from_polar(1.0, self.h * t);
        let g: Vec<C> = y.iter().map(|v| v / ph).collect();
        out[0] = -ph * self.sigma_retarded(&g);
    }
    fn source(&self, y: &[C], t: f64, out: &mut [C]) {
        if self.kind == ModelKind::Free {
            out.iter_mut().for_each(|v| *v = C::new(0.0, 0.0));
            return;
        }
        let ph = C::from_polar(1.0, self.h * t);
        let g: Vec<C> = y.iter().map(|v| v / ph).collect();
        let q = &self.conv * DVector::from_vec(self.sigma_nodes(&g));
        for (o, v) in out.iter_mut().zip(q.iter()) {
            *o = ph * v;
        }
    }
}

/// Real-time problem for `G(t, tau_j)` given the equilibrium `G_M`.
pub fn mixed_problem(
    kind: ModelKind,
    h: f64,
    basis: &DlrBasis,
    gm: &ImTimeFn,
    dt: f64,
    n_points: usize,
    p: usize,
) -> Result<ProblemDef<f64, MixedModel>> {
    if !basis.owns(gm) {
        return Err(GreensError::Config(
            "Matsubara function was built on a different basis".into(),
        ));
    }
    let model = MixedModel {
        kind,
        h,
        e0: basis.node_functional(0.0),
        eb: basis.node_functional(basis.beta),
        refl: basis.reflect_matrix().map(|v| C::new(v, 0.0)),
        conv: basis.conv_matrix(gm)?,
    };
    let y0 = basis
        .tau_nodes()
        .iter()
        .map(|&t| basis.eval(gm, basis.beta - t).map(|v| -I * v))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProblemDef::new(model, y0, dt, n_points, p))
}

/// Node samples `G(t_n, tau_j)` on a uniform time grid.
#[derive(Debug, Clone)]
pub struct MixedGreens<'a> {
    pub basis: &'a DlrBasis,
    pub dt: f64,
    pub h: f64,
    /// Row-major `N x r`.
    pub gtv: Vec<C>,
}

impl<'a> MixedGreens<'a> {
    pub fn from_trajectory(basis: &'a DlrBasis, traj: &Trajectory<f64>, h: f64) -> Result<Self> {
        let r = basis.r();
        if traj.d != r {
            return Err(GreensError::Config(format!(
                "trajectory has {} components, basis has r = {r}",
                traj.d
            )));
        }
        let mut gtv = Vec::with_capacity(traj.len() * r);
        for n in 0..traj.len() {
            let ph = C::from_polar(1.0, -h * traj.time(n));
            gtv.extend(traj.y_at(n).iter().map(|v| v * ph));
        }
        Ok(Self {
            basis,
            dt: traj.dt,
            h,
            gtv,
        })
    }

    pub fn len(&self) -> usize {
        self.gtv.len() / self.basis.r()
    }

    pub fn is_empty(&self) -> bool {
        self.gtv.is_empty()
    }

    pub fn row(&self, n: usize) -> &[C] {
        let r = self.basis.r();
        &self.gtv[n * r..(n + 1) * r]
    }
}

#[derive(Debug, Clone)]
pub struct Components {
    pub lesser: Vec<C>,
    pub greater: Vec<C>,
    pub retarded: Vec<C>,
}

/// `G_<(t) = G(t, 0)`, `G_>(t) = -G(t, beta)`, `G_R = G_> - G_<`.
pub fn recover_components(mg: &MixedGreens) -> Components {
    let e0 = mg.basis.node_functional(0.0);
    let eb = mg.basis.node_functional(mg.basis.beta);
    let dot = |e: &[f64], row: &[C]| e.iter().zip(row).map(|(a, b)| b * *a).sum::<C>();
    let lesser: Vec<C> = (0..mg.len()).map(|n| dot(&e0, mg.row(n))).collect();
    let greater: Vec<C> = (0..mg.len()).map(|n| -dot(&eb, mg.row(n))).collect();
    let retarded = greater.iter().zip(&lesser).map(|(g, l)| g - l).collect();
    Components {
        lesser,
        greater,
        retarded,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Taper {
    None,
    /// Raised-cosine roll-off over the final `fraction` of the record.
    Cosine {
        fraction: f64,
    },
    /// `exp(-rate t)`.
    Exponential {
        rate: f64,
    },
}

impl Taper {
    pub fn weight(&self, t: f64, t_max: f64) -> f64 {
        match *self {
            Taper::None => 1.0,
            Taper::Cosine { fraction } => {
                let start = t_max * (1.0 - fraction);
                if t <= start || fraction <= 0.0 {
                    1.0
                } else {
                    0.5 * (1.0 + (std::f64::consts::PI * (t - start) / (t_max - start)).cos())
                }
            }
            Taper::Exponential { rate } => (-rate * t).exp(),
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            Taper::None => "none".into(),
            Taper::Cosine { fraction } => format!("cosine over final {fraction}"),
            Taper::Exponential { rate } => format!("exponential rate {rate}"),
        }
    }
}

impl Default for Taper {
    fn default() -> Self {
        Taper::Cosine { fraction: 0.1 }
    }
}

#[derive(Debug, Clone)]
pub struct SpectralData {
    pub omega: Vec<f64>,
    pub a: Vec<f64>,
    pub window: String,
}

impl SpectralData {
    /// Riemann sum of `A` over the grid.
    pub fn integral(&self) -> f64 {
        if self.omega.len() < 2 {
            return 0.0;
        }
        let dw = self.omega[1] - self.omega[0];
        self.a.iter().sum::<f64>() * dw
    }
}

/// `A(w) = -(1/pi) Im int_0^T exp(iwt) w(t) G_R(t) dt` on the uniform grid
/// `2 pi k / (M dt)` restricted to `[omega_min, omega_max]`, with Gregory
/// endpoint weights and an FFT of length `M >= pad * N`.
pub fn spectral_function(
    gr: &[C],
    dt: f64,
    taper: Taper,
    omega_min: f64,
    omega_max: f64,
    pad: usize,
) -> Result<SpectralData> {
    let n = gr.len();
    if n < 16 {
        return Err(GreensError::Config(format!("need at least 16 samples, got {n}")));
    }
    let q = 7.min(n / 2);
    let mu = gregory_weights::<f64>(q)?;
    let t_max = (n - 1) as f64 * dt;
    let m = (pad.max(1) * n).next_power_of_two();
    let mut buf = vec![C::new(0.0, 0.0); m];
    for (i, g) in gr.iter().enumerate() {
        buf[i] = g * (dt * taper.weight(i as f64 * dt, t_max));
    }
    for (k, &w) in mu.iter().enumerate() {
        let (lo, hi) = (k, n - 1 - k);
        buf[lo] += gr[lo] * (dt * w * taper.weight(lo as f64 * dt, t_max));
        buf[hi] += gr[hi] * (dt * w * taper.weight(hi as f64 * dt, t_max));
    }
    FftPlanner::new().plan_fft_inverse(m).process(&mut buf);
    let dw = 2.0 * std::f64::consts::PI / (m as f64 * dt);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|k| {
            let kk = if k <= m / 2 { k as f64 } else { k as f64 - m as f64 };
            (kk * dw, -buf[k].im / std::f64::consts::PI)
        })
        .filter(|(w, _)| *w >= omega_min && *w <= omega_max)
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(SpectralData {
        omega: pairs.iter().map(|p| p.0).collect(),
        a: pairs.iter().map(|p| p.1).collect(),
        window: taper.describe(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imtime::{free_fermion, solve_matsubara};
    use crate::quad::{composite_rule, gauss_legendre};
    use fastvie::{solve, Mode};

    #[test]
    fn j1_small_argument() {
        assert_eq!(bessel_j1(0.0), 0.0);
        let x: f64 = 1e-3;
        assert!((bessel_j1(x) - (x / 2.0 - x.powi(3) / 16.0)).abs() < 1e-17);
    }

    fn j1_oracle(x: f64) -> f64 {
        // (1/pi) int_0^pi cos(theta - x sin theta) by composite Gauss-Legendre.
        let panels = (x as usize + 8) * 4;
        let edges: Vec<f64> = (0..=panels)
            .map(|i| std::f64::consts::PI * i as f64 / panels as f64)
            .collect();
        let (t, w) = composite_rule(&edges, 20);
        t.iter()
            .zip(&w)
            .map(|(&th, &wt)| wt * (th - x * th.sin()).cos())
            .sum::<f64>()
            / std::f64::consts::PI
    }

    #[test]
    fn j1_against_quadrature() {
        for x in [0.5, 2.0, 3.99, 4.0, 7.3, 25.0, 120.0, 2000.0] {
            let got = bessel_j1(x);
            let want = j1_oracle(x);
            assert!((got - want).abs() < 1e-13, "x={x}: {got} vs {want}");
        }
        // Tabulated zero and value.
        assert!(bessel_j1(3.831705970207512).abs() < 1e-14);
        assert!((bessel_j1(1.0) - 0.44005058574493355).abs() < 1e-15);
    }

    #[test]
    fn exact_bethe_examples() {
        assert_eq!(bethe_gr_exact(0.0, 1.0, -1.0), -I);
        for h in [-1.0, 0.0, 2.5] {
            let a = bethe_gr_exact(1.7, 1.0, h).norm();
            assert!((a - (bessel_j1(3.4) / 1.7).abs()).abs() < 1e-15);
        }
        let want = -I * C::from_polar(1.0, 3.0) * (bessel_j1(6.0) / 3.0);
        assert!((bethe_gr_exact(3.0, 1.0, -1.0) - want).norm() < 1e-15);
    }

    #[test]
    fn semicircle_examples() {
        assert!((bethe_semicircle(-1.0, 1.0, -1.0) - 1.0 / std::f64::consts::PI).abs() < 1e-15);
        assert_eq!(bethe_semicircle(1.0, 1.0, -1.0), 0.0);
        assert_eq!(bethe_semicircle(-3.0, 1.0, -1.0), 0.0);
        // omega = 2c sin(theta) removes the square-root endpoints.
        let (x, w) = gauss_legendre(60);
        let c = 0.7;
        let half = std::f64::consts::FRAC_PI_2;
        let total: f64 = x
            .iter()
            .zip(&w)
            .map(|(&u, &wt)| {
                let th = half * u;
                wt * half * 2.0 * c * th.cos() * bethe_semicircle(2.0 * c * th.sin(), c, 0.0)
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn retarded_free_propagator() {
        let prob = bethe_retarded_problem(0.0, 0.05, 200, 8);
        let traj = solve(&prob, Mode::Fast).unwrap();
        let gr = retarded_from_trajectory(&traj, 0.6);
        for (n, g) in gr.iter().enumerate() {
            let want = -I * C::from_polar(1.0, -0.6 * n as f64 * 0.05);
            assert!((g - want).norm() < 1e-13);
        }
    }

    #[test]
    fn sigma_helpers() {
        let b = DlrBasis::build(4.0, 20.0, 1e-12).unwrap();
        let zero = vec![C::new(0.0, 0.0); b.r()];
        assert!(syk_sigma_mixed(&zero, &b, 1.0).iter().all(|v| v.norm() == 0.0));
        let a = C::new(0.3, -0.2);
        let s = syk_sigma_mixed(&vec![a; b.r()], &b, 1.5);
        let want = a * a.norm_sqr() * 2.25;
        assert!(s.iter().all(|v| (v - want).norm() < 1e-12));
        assert_eq!(
            retarded_sigma_from_mixed(C::new(0.0, 0.0), C::new(0.0, 0.0)),
            C::new(0.0, 0.0)
        );
    }

    #[test]
    fn free_mixed_evolution() {
        let b = DlrBasis::build(5.0, 20.0, 1e-12).unwrap();
        let h = 0.8;
        let vals: Vec<C> = b
            .tau_nodes()
            .iter()
            .map(|&t| C::new(free_fermion(t, h, b.beta), 0.0))
            .collect();
        let gm = b.fit(&vals).unwrap();
        let prob = mixed_problem(ModelKind::Free, h, &b, &gm, 0.05, 101, 6).unwrap();
        let y0 = prob.y0.clone();
        let traj = solve(&prob, Mode::Fast).unwrap();
        let mg = MixedGreens::from_trajectory(&b, &traj, h).unwrap();
        for n in [0, 50, 100] {
            let ph = C::from_polar(1.0, -h * n as f64 * 0.05);
            for (g, g0) in mg.row(n).iter().zip(&y0) {
                assert!((g - g0 * ph).norm() < 1e-12);
            }
        }
        let comp = recover_components(&mg);
        for (n, g) in comp.retarded.iter().enumerate() {
            let want = -I * C::from_polar(1.0, -h * n as f64 * 0.05);
            assert!((g - want).norm() < 1e-10, "n={n}");
        }
    }

    #[test]
    fn basis_mismatch_is_rejected() {
        let a = DlrBasis::build(5.0, 20.0, 1e-12).unwrap();
        let b = DlrBasis::build(6.0, 20.0, 1e-12).unwrap();
        let gm = a.fit(&vec![C::new(-0.5, 0.0); a.r()]).unwrap();
        assert!(matches!(
            mixed_problem(ModelKind::Free, 0.0, &b, &gm, 0.1, 20, 4),
            Err(GreensError::Config(_))
        ));
    }

    #[test]
    fn bethe_mixed_matches_exact_short() {
        let b = DlrBasis::build(10.0, 40.0, 1e-15).unwrap();
        let kind = ModelKind::Bethe { c: 1.0 };
        let sol = solve_matsubara(&b, -1.0, kind.matsubara_sigma(&b), 0.5, 1e-14, 500).unwrap();
        let prob = mixed_problem(kind, -1.0, &b, &sol.g, 1.0 / 32.0, 321, 8).unwrap();
        let traj = solve(&prob, Mode::Fast).unwrap();
        let mg = MixedGreens::from_trajectory(&b, &traj, -1.0).unwrap();
        let comp = recover_components(&mg);
        let err = comp
            .retarded
            .iter()
            .enumerate()
            .map(|(n, g)| (g - bethe_gr_exact(n as f64 / 32.0, 1.0, -1.0)).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn spectral_of_free_propagator() {
        let dt = 0.05;
        let h = 0.5;
        let gr: Vec<C> = (0..8000).map(|n| -I * C::from_polar(1.0, -h * n as f64 * dt)).collect();
        let sp = spectral_function(&gr, dt, Taper::default(), -5.0, 5.0, 4).unwrap();
        let (imax, _) =
            sp.a.iter()
                .enumerate()
                .fold((0, f64::MIN), |m, (i, &v)| if v > m.1 { (i, v) } else { m });
        assert!((sp.omega[imax] - h).abs() < 0.01);
        assert!((sp.integral() - 1.0).abs() < 1e-3, "{}", sp.integral());
    }
}
