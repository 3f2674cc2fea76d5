use proptest::prelude::*;

use fastvie::{solve, Complex64 as C, FnModel, KernelLayout, Mode, ProblemDef};

fn max_err(y: &[C], dt: f64, exact: impl Fn(f64) -> C) -> f64 {
    y.iter()
        .enumerate()
        .map(|(n, v)| (v - exact(n as f64 * dt)).norm())
        .fold(0.0, f64::max)
}

/// `i y' + a int_0^t y = 0` has `y = y0 cosh(sqrt(i a) t)`.
#[test]
fn constant_kernel_closed_form() {
    let (a, dt, n) = (1.0, 1.0 / 32.0, 321);
    let model = FnModel {
        dim: 1,
        layout: KernelLayout::PerComponent,
        kernel: move |_: &[C], _: f64, out: &mut [C]| out[0] = C::new(a, 0.0),
        source: |_: &[C], _: f64, out: &mut [C]| out[0] = C::new(0.0, 0.0),
    };
    let y0 = C::new(0.3, -1.0);
    let lam = (C::i() * a).sqrt();
    for mode in [Mode::Fast, Mode::Direct] {
        let tr = solve(&ProblemDef::new(&model, vec![y0], dt, n, 8), mode).unwrap();
        let err = max_err(&tr.y, dt, |t| y0 * (lam * t).cosh());
        assert!(err < 1e-10, "{mode:?}: {err:e}");
    }
}

/// Kernel equal to the solution itself, with `f` chosen so that
/// `y = exp(-i w t)`: then `f(t) = (w + t) exp(-i w t)`.
fn manufactured(w: f64) -> FnModel<impl Fn(&[C], f64, &mut [C]), impl Fn(&[C], f64, &mut [C])> {
    FnModel {
        dim: 1,
        layout: KernelLayout::PerComponent,
        kernel: |y: &[C], _: f64, out: &mut [C]| out[0] = y[0],
        source: move |_: &[C], t: f64, out: &mut [C]| out[0] = (w + t) * C::from_polar(1.0, -w * t),
    }
}

fn manufactured_err(w: f64, p: usize, dt: f64, tmax: f64) -> f64 {
    let n = (tmax / dt).round() as usize + 1;
    let tr = solve(
        &ProblemDef::new(manufactured(w), vec![C::new(1.0, 0.0)], dt, n, p),
        Mode::Fast,
    )
    .unwrap();
    max_err(&tr.y, dt, |t| C::from_polar(1.0, -w * t))
}

#[test]
fn manufactured_orders() {
    for (p, dt) in [(2usize, 0.02), (4, 0.05), (6, 0.1)] {
        let e1 = manufactured_err(0.7, p, dt, 4.0);
        let e2 = manufactured_err(0.7, p, dt / 2.0, 4.0);
        let order = (e1 / e2).log2();
        assert!(
            (order - p as f64).abs() < 0.5,
            "p {p}: errors {e1:e} {e2:e}, order {order}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn manufactured_solution_is_tracked(w in -2.0f64..2.0, p in prop::sample::select(vec![4usize, 6, 8])) {
        let err = manufactured_err(w, p, 1.0 / 64.0, 3.0);
        prop_assert!(err < 1e-6, "w {w} p {p}: {err:e}");
    }

    #[test]
    fn fast_matches_direct(c in 0.2f64..2.0, n in 20usize..400, p in prop::sample::select(vec![2usize, 4, 6, 8])) {
        let model = FnModel {
            dim: 2,
            layout: KernelLayout::PerComponent,
            kernel: move |y: &[C], _: f64, out: &mut [C]| {
                out[0] = -c * c * y[0];
                out[1] = -0.5 * y[0] * y[1];
            },
            source: |y: &[C], t: f64, out: &mut [C]| {
                out[0] = C::new(0.0, 0.0);
                out[1] = 0.1 * y[0] + C::new(t.sin(), 0.0);
            },
        };
        let prob = ProblemDef::new(&model, vec![C::new(0.0, -1.0), C::new(1.0, 0.5)], 0.05, n, p);
        let fast = solve(&prob, Mode::Fast).unwrap();
        let direct = solve(&prob, Mode::Direct).unwrap();
        let scale = direct.y.iter().map(|v| v.norm()).fold(1.0, f64::max);
        let diff = fast.y.iter().zip(&direct.y).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(diff <= 1e-12 * scale, "{diff:e}");
    }
}

#[test]
fn single_precision_tracks_double() {
    let mk = |c: f64| FnModel {
        dim: 1,
        layout: KernelLayout::PerComponent,
        kernel: move |y: &[C], _: f64, out: &mut [C]| out[0] = -c * c * y[0],
        source: |_: &[C], _: f64, out: &mut [C]| out[0] = C::new(0.0, 0.0),
    };
    type C32 = fastvie::Complex32;
    let m32 = FnModel {
        dim: 1,
        layout: KernelLayout::PerComponent,
        kernel: |y: &[C32], _: f32, out: &mut [C32]| out[0] = -y[0],
        source: |_: &[C32], _: f32, out: &mut [C32]| out[0] = C32::new(0.0, 0.0),
    };
    let d = solve(
        &ProblemDef::new(mk(1.0), vec![C::new(0.0, -1.0)], 1.0 / 16.0, 400, 4),
        Mode::Fast,
    )
    .unwrap();
    let s = solve(
        &ProblemDef::new(m32, vec![C32::new(0.0, -1.0)], 1.0 / 16.0, 400, 4),
        Mode::Fast,
    )
    .unwrap();
    let diff =
        d.y.iter()
            .zip(&s.y)
            .map(|(a, b)| (a - C::new(b.re as f64, b.im as f64)).norm())
            .fold(0.0, f64::max);
    assert!(diff < 1e-4, "{diff:e}");
}
