use proptest::prelude::*;

use fastvie::blockplan::validate_plan;
use fastvie::{BlockPlan, Complex64 as C, HistoryEngine, KernelLayout, Variant};

fn naive(k: &[C], y: &[C], n: usize) -> C {
    let mut s = C::new(0.0, 0.0);
    for m in 0..=n {
        s += k[n - m] * y[m];
    }
    s
}

fn seq(len: usize) -> impl Strategy<Value = Vec<C>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0).prop_map(|(a, b)| C::new(a, b)), len)
}

fn case() -> impl Strategy<Value = (usize, usize, bool)> {
    (2usize..700).prop_flat_map(|n| {
        let max_l = (n as f64).log2().floor() as usize;
        (Just(n), 1..=max_l, any::<bool>())
    })
}

fn within(got: C, want: C, scale: f64) -> bool {
    (got - want).norm() <= 1e-12 * scale.max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plans_are_valid((n, l, hls) in case()) {
        let v = if hls { Variant::Hls } else { Variant::KernelNonlinear };
        let plan = BlockPlan::build(n, l, v).unwrap();
        let rep = validate_plan(&plan);
        prop_assert!(rep.failures.is_empty(), "{:?}", rep.failures);
    }

    #[test]
    fn streamed_sums_match_naive((n, l, _) in case(), d in 1usize..4, shared in any::<bool>(), seed in seq(1400 * 4)) {
        let layout = if shared { KernelLayout::Shared } else { KernelLayout::PerComponent };
        let tracks = if shared { 1 } else { d };
        let plan = BlockPlan::build(n, l, Variant::KernelNonlinear).unwrap();
        let ys: Vec<Vec<C>> = (0..d).map(|c| seed[c * n..(c + 1) * n].to_vec()).collect();
        let ks: Vec<Vec<C>> = (0..tracks).map(|c| seed[(2 + c) * n..(3 + c) * n].iter().map(|z| z.conj()).collect()).collect();
        let mut eng = HistoryEngine::new(plan, d, layout).unwrap();
        for m in 0..n {
            let y: Vec<C> = ys.iter().map(|t| t[m]).collect();
            let k: Vec<C> = ks.iter().map(|t| t[m]).collect();
            eng.push_step(&y, &k).unwrap();
            let s = eng.finalize_step().unwrap();
            for c in 0..d {
                let kt = &ks[if shared { 0 } else { c }];
                prop_assert!(within(s[c], naive(kt, &ys[c], m), m as f64), "n {m} c {c}");
            }
        }
    }

    #[test]
    fn fixed_kernel_sums_match_naive((n, l, hls) in case(), seed in seq(1400)) {
        let v = if hls { Variant::Hls } else { Variant::KernelNonlinear };
        let plan = BlockPlan::build(n, l, v).unwrap();
        let (k, y) = (seed[..n].to_vec(), seed[n..2 * n].to_vec());
        let mut eng = HistoryEngine::with_fixed_kernel(plan, 1, KernelLayout::PerComponent, vec![k.clone()]).unwrap();
        for m in 0..n {
            eng.push_y(&y[m..=m]).unwrap();
            let s = eng.finalize_step().unwrap()[0];
            prop_assert!(within(s, naive(&k, &y, m), m as f64), "n {m}");
        }
    }
}

#[test]
fn single_precision_engine() {
    type C32 = fastvie::Complex32;
    let n = 300;
    let k: Vec<C32> = (0..n).map(|i| C32::new((i as f32 * 0.1).cos(), 0.3)).collect();
    let y: Vec<C32> = (0..n).map(|i| C32::new(0.5, (i as f32 * 0.07).sin())).collect();
    let plan = BlockPlan::for_steps(n, 8, Variant::KernelNonlinear).unwrap();
    let mut eng = HistoryEngine::<f32>::new(plan, 1, KernelLayout::PerComponent).unwrap();
    for m in 0..n {
        eng.push_step(&y[m..=m], &k[m..=m]).unwrap();
        let s = eng.finalize_step().unwrap()[0];
        let want: C = (0..=m)
            .map(|j| {
                let (a, b) = (k[m - j], y[j]);
                C::new(a.re as f64, a.im as f64) * C::new(b.re as f64, b.im as f64)
            })
            .sum();
        let err = ((s.re as f64 - want.re).powi(2) + (s.im as f64 - want.im).powi(2)).sqrt();
        assert!(err <= 1e-4 * (m as f64 + 1.0), "n {m}: {err}");
    }
}
