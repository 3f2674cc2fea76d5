//! On-the-fly history sums `s_n = sum_{m=0}^{n} k_{n-m} y_m` for a batch of
//! `d` convolutions sharing one [`BlockPlan`].
//!
//! Each step the caller pushes `y_n` (and `k_n` unless the kernel is fixed),
//! then calls [`HistoryEngine::finalize_step`], which applies the blocks
//! triggered at `n`, adds the local direct sums of row `n`, and returns
//! `s_n`. Blocks write ahead into rows `> n`, so their contributions are
//! waiting by the time those rows are finalized.

use num_traits::Zero;

use crate::blockplan::{BlockDescriptor, BlockPlan, Variant};
use crate::error::{Error, Result};
use crate::fftconv::{Convolver, PreparedBlock};
use crate::scalar::{is_finite, Cplx, Real};

/// How kernel values map to components.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelLayout {
    /// Component `j` convolves `k_j` with `y_j`.
    PerComponent,
    /// One scalar kernel multiplies every component. Each block symbol is
    /// transformed once per trigger and reused across components.
    Shared,
}

#[derive(Debug)]
pub struct HistoryEngine<T: Real> {
    plan: BlockPlan,
    d: usize,
    layout: KernelLayout,
    y: Vec<Vec<Cplx<T>>>,
    k: Vec<Vec<Cplx<T>>>,
    acc: Vec<Vec<Cplx<T>>>,
    cursor: usize,
    pushed: bool,
    next_block: usize,
    // Pre-transformed symbols for a fixed kernel, indexed [block][kernel track].
    fixed: Option<Vec<Vec<PreparedBlock<T>>>>,
    conv: Convolver<T>,
    sym: Vec<Cplx<T>>,
}

/// Writes the symbol of `b` from kernel track `k` into `sym`, leaving lags
/// removed by the shape mask at zero so they are never read.
fn extract_symbol<T: Real>(b: &BlockDescriptor, k: &[Cplx<T>], sym: &mut Vec<Cplx<T>>) {
    let full = b.lag_range();
    let live = b.live_lag_range();
    sym.clear();
    sym.resize(full.end() - full.start() + 1, Cplx::zero());
    let off = live.start() - full.start();
    let src = &k[live];
    debug_assert!(src.iter().all(|&v| is_finite(v)), "kernel read beyond cursor");
    sym[off..off + src.len()].copy_from_slice(src);
}

fn poisoned<T: Real>(n: usize) -> Vec<Cplx<T>> {
    let fill = if cfg!(debug_assertions) {
        Cplx::new(T::nan(), T::nan())
    } else {
        Cplx::zero()
    };
    vec![fill; n]
}

impl<T: Real> HistoryEngine<T> {
    /// Engine for a kernel revealed step by step through [`Self::push_step`].
    pub fn new(plan: BlockPlan, d: usize, layout: KernelLayout) -> Result<Self> {
        if d == 0 {
            return Err(Error::Parameter("history engine needs d >= 1".into()));
        }
        if plan.variant() == Variant::Hls && !plan.blocks().is_empty() {
            return Err(Error::State(
                "hls plans read kernel lags ahead of the cursor; use with_fixed_kernel".into(),
            ));
        }
        let n = plan.n();
        let tracks = match layout {
            KernelLayout::PerComponent => d,
            KernelLayout::Shared => 1,
        };
        Ok(Self {
            d,
            layout,
            y: (0..d).map(|_| poisoned(n)).collect(),
            k: (0..tracks).map(|_| poisoned(n)).collect(),
            acc: vec![vec![Cplx::zero(); n]; d],
            cursor: 0,
            pushed: false,
            next_block: 0,
            fixed: None,
            conv: Convolver::new(),
            sym: Vec::new(),
            plan,
        })
    }

    /// Engine for a kernel known in full before stepping. `kernels` holds
    /// one length-`N` track per component, or a single track for
    /// [`KernelLayout::Shared`]. Works with either plan variant.
    pub fn with_fixed_kernel(
        plan: BlockPlan,
        d: usize,
        layout: KernelLayout,
        kernels: Vec<Vec<Cplx<T>>>,
    ) -> Result<Self> {
        let hls_plan = plan.clone().with_variant(Variant::KernelNonlinear);
        let mut eng = Self::new(hls_plan, d, layout)?;
        eng.plan = plan;
        if kernels.len() != eng.k.len() || kernels.iter().any(|k| k.len() != eng.plan.n()) {
            return Err(Error::Dimension(format!(
                "expected {} kernel tracks of length {}",
                eng.k.len(),
                eng.plan.n()
            )));
        }
        eng.k = kernels;
        let mut prepared = Vec::with_capacity(eng.plan.blocks().len());
        for b in eng.plan.blocks() {
            let mut per_track = Vec::with_capacity(eng.k.len());
            for k in &eng.k {
                extract_symbol(b, k, &mut eng.sym);
                per_track.push(eng.conv.prepare(b.shape, b.nrows(), b.ncols(), &eng.sym)?);
            }
            prepared.push(per_track);
        }
        eng.fixed = Some(prepared);
        Ok(eng)
    }

    pub fn plan(&self) -> &BlockPlan {
        &self.plan
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn layout(&self) -> KernelLayout {
        self.layout
    }

    /// Index of the step awaiting `finalize_step`.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Number of kernel tracks pushed per step.
    pub fn kernel_tracks(&self) -> usize {
        self.k.len()
    }

    /// Finalized `y` history of component `c` (indices `0 .. cursor`).
    pub fn y_hist(&self, c: usize) -> &[Cplx<T>] {
        &self.y[c][..self.cursor]
    }

    /// Finalized kernel history of track `c`.
    pub fn k_hist(&self, c: usize) -> &[Cplx<T>] {
        &self.k[c][..self.cursor]
    }

    fn check_push(&self, y: &[Cplx<T>]) -> Result<()> {
        if self.pushed {
            return Err(Error::State(format!("step {} already pushed", self.cursor)));
        }
        if self.cursor >= self.plan.n() {
            return Err(Error::State(format!("all {} steps consumed", self.plan.n())));
        }
        if y.len() != self.d {
            return Err(Error::Dimension(format!(
                "pushed {} values for d = {}",
                y.len(),
                self.d
            )));
        }
        Ok(())
    }

    /// Records `y_n` and `k_n` at the cursor.
    pub fn push_step(&mut self, y: &[Cplx<T>], k: &[Cplx<T>]) -> Result<()> {
        if self.fixed.is_some() {
            return Err(Error::State("kernel is fixed; use push_y".into()));
        }
        self.check_push(y)?;
        if k.len() != self.k.len() {
            return Err(Error::Dimension(format!(
                "pushed {} kernel values, expected {}",
                k.len(),
                self.k.len()
            )));
        }
        let n = self.cursor;
        for (track, &v) in self.k.iter_mut().zip(k) {
            track[n] = v;
        }
        for (track, &v) in self.y.iter_mut().zip(y) {
            track[n] = v;
        }
        self.pushed = true;
        Ok(())
    }

    /// Records `y_n` for an engine with a fixed kernel.
    pub fn push_y(&mut self, y: &[Cplx<T>]) -> Result<()> {
        if self.fixed.is_none() {
            return Err(Error::State("kernel is not fixed; use push_step".into()));
        }
        self.check_push(y)?;
        let n = self.cursor;
        for (track, &v) in self.y.iter_mut().zip(y) {
            track[n] = v;
        }
        self.pushed = true;
        Ok(())
    }

    /// Applies the blocks triggered at the cursor, adds the local sums of the
    /// cursor row, advances, and returns `s_n` for every component.
    pub fn finalize_step(&mut self) -> Result<Vec<Cplx<T>>> {
        let mut out = vec![Cplx::zero(); self.d];
        self.finalize_into(&mut out)?;
        Ok(out)
    }

    /// Allocation-free form of [`Self::finalize_step`].
    pub fn finalize_into(&mut self, out: &mut [Cplx<T>]) -> Result<()> {
        if !self.pushed {
            return Err(Error::State(format!("step {} finalized before push", self.cursor)));
        }
        if out.len() != self.d {
            return Err(Error::Dimension(format!(
                "output has {} slots for d = {}",
                out.len(),
                self.d
            )));
        }
        let n = self.cursor;
        while let Some(&b) = self.plan.blocks().get(self.next_block) {
            if b.trigger_row != n {
                debug_assert!(b.trigger_row > n, "block {b:?} skipped");
                break;
            }
            self.apply_block(self.next_block, &b)?;
            self.next_block += 1;
        }

        let (recent_k, recent_y) = self.plan.local_ranges(n);
        for c in 0..self.d {
            let kt = &self.k[self.track(c)];
            let y = &self.y[c];
            let mut s = self.acc[c][n];
            for r in [recent_k.clone(), recent_y.clone()].into_iter().flatten() {
                for m in r {
                    let (kv, yv) = (kt[n - m], y[m]);
                    debug_assert!(is_finite(kv) && is_finite(yv), "read of unwritten entry at ({n}, {m})");
                    s += kv * yv;
                }
            }
            self.acc[c][n] = s;
            out[c] = s;
        }
        self.cursor += 1;
        self.pushed = false;
        Ok(())
    }

    fn track(&self, c: usize) -> usize {
        match self.layout {
            KernelLayout::PerComponent => c,
            KernelLayout::Shared => 0,
        }
    }

    fn apply_block(&mut self, index: usize, b: &BlockDescriptor) -> Result<()> {
        let n = self.cursor;
        assert!(
            b.col_last <= n && (self.fixed.is_some() || *b.live_lag_range().end() <= n),
            "plan bug: block {b:?} reads beyond step {n}"
        );
        let Self {
            y,
            k,
            acc,
            fixed,
            conv,
            sym,
            layout,
            d,
            ..
        } = self;
        let mut cached: Option<PreparedBlock<T>> = None;
        for c in 0..*d {
            let kt = match layout {
                KernelLayout::PerComponent => c,
                KernelLayout::Shared => 0,
            };
            let prep = match fixed {
                Some(f) => &f[index][kt],
                None => {
                    if *layout == KernelLayout::PerComponent || cached.is_none() {
                        extract_symbol(b, &k[kt], sym);
                        cached = Some(conv.prepare(b.shape, b.nrows(), b.ncols(), sym)?);
                    }
                    cached.as_ref().expect("prepared above")
                }
            };
            let x = &y[c][b.col_first..=b.col_last];
            debug_assert!(x.iter().all(|&v| is_finite(v)), "solution read beyond cursor");
            conv.apply_add(prep, x, &mut acc[c][b.row_first..=b.row_last])?;
        }
        Ok(())
    }
}

/// Direct `O(N^2)` evaluation of every `s_n`.
pub fn direct_sums<T: Real>(k: &[Cplx<T>], y: &[Cplx<T>]) -> Result<Vec<Cplx<T>>> {
    if k.len() != y.len() {
        return Err(Error::Dimension(format!(
            "k has {} entries, y has {}",
            k.len(),
            y.len()
        )));
    }
    Ok((0..y.len())
        .map(|n| (0..=n).fold(Cplx::zero(), |s, m| s + k[n - m] * y[m]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::max_rel_err;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type C = Cplx<f64>;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    fn rand_seq(rng: &mut ChaCha8Rng, n: usize) -> Vec<C> {
        (0..n)
            .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    fn plan(n: usize, variant: Variant) -> BlockPlan {
        BlockPlan::for_steps(n, 4, variant).unwrap()
    }

    fn run_scalar(n: usize, k: &[C], y: &[C]) -> Vec<C> {
        let mut e = HistoryEngine::new(plan(n, Variant::KernelNonlinear), 1, KernelLayout::PerComponent).unwrap();
        (0..n)
            .map(|i| {
                e.push_step(&[y[i]], &[k[i]]).unwrap();
                e.finalize_step().unwrap()[0]
            })
            .collect()
    }

    #[test]
    fn construction() {
        assert!(HistoryEngine::<f64>::new(plan(8, Variant::KernelNonlinear), 0, KernelLayout::PerComponent).is_err());
        let e = HistoryEngine::<f64>::new(plan(8, Variant::KernelNonlinear), 3, KernelLayout::PerComponent).unwrap();
        assert_eq!(e.d(), 3);
        assert_eq!(e.kernel_tracks(), 3);
        assert!(e.acc.iter().all(|a| a.len() == 8 && a.iter().all(|v| v.is_zero())));
        assert!(
            HistoryEngine::<f64>::new(BlockPlan::build(64, 3, Variant::Hls).unwrap(), 1, KernelLayout::Shared).is_err()
        );
    }

    #[test]
    fn single_term_and_state_errors() {
        let mut e = HistoryEngine::new(plan(8, Variant::KernelNonlinear), 2, KernelLayout::PerComponent).unwrap();
        assert!(e.finalize_step().is_err());
        e.push_step(&[c(2.0, 1.0), c(0.0, 3.0)], &[c(0.5, 0.0), c(1.0, -1.0)])
            .unwrap();
        assert!(matches!(
            e.push_step(&[c(0.0, 0.0); 2], &[c(0.0, 0.0); 2]),
            Err(Error::State(_))
        ));
        let s = e.finalize_step().unwrap();
        assert_eq!(s, vec![c(1.0, 0.5), c(3.0, 3.0)]);
        assert!(e.push_y(&[c(0.0, 0.0); 2]).is_err());
        assert!(e.push_step(&[c(0.0, 0.0)], &[c(0.0, 0.0); 2]).is_err());
    }

    #[test]
    fn steps_exhausted() {
        let mut e =
            HistoryEngine::new(BlockPlan::direct(2, Variant::KernelNonlinear), 1, KernelLayout::Shared).unwrap();
        for _ in 0..2 {
            e.push_step(&[c(1.0, 0.0)], &[c(1.0, 0.0)]).unwrap();
            e.finalize_step().unwrap();
        }
        assert!(e.push_step(&[c(1.0, 0.0)], &[c(1.0, 0.0)]).is_err());
    }

    #[test]
    fn trivial_kernels() {
        let n = 100;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = rand_seq(&mut rng, n);
        let zero = vec![c(0.0, 0.0); n];
        assert!(run_scalar(n, &zero, &y).iter().all(|v| v.is_zero()));
        let mut delta = zero.clone();
        delta[0] = c(1.0, 0.0);
        assert!(max_rel_err(&run_scalar(n, &delta, &y), &y) < 1e-15);
        let ones = vec![c(1.0, 0.0); n];
        let counts: Vec<C> = (0..n).map(|i| c(i as f64 + 1.0, 0.0)).collect();
        assert!(max_rel_err(&run_scalar(n, &ones, &ones), &counts) < 1e-14);
    }

    #[test]
    fn direct_sums_examples() {
        let s = direct_sums(&[c(1.0, 0.0), c(2.0, 0.0)], &[c(3.0, 0.0), c(4.0, 0.0)]).unwrap();
        assert_eq!(s, vec![c(3.0, 0.0), c(10.0, 0.0)]);
        let e = [c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)];
        assert_eq!(direct_sums(&e, &e).unwrap(), e.to_vec());
        assert!(direct_sums::<f64>(&[], &[]).unwrap().is_empty());
        assert!(direct_sums(&e, &e[..2]).is_err());
    }

    #[test]
    fn causal_kernel_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [7usize, 8, 64, 129, 512] {
            let d = 3;
            let mut e = HistoryEngine::new(plan(n, Variant::KernelNonlinear), d, KernelLayout::PerComponent).unwrap();
            let ys: Vec<Vec<C>> = (0..d).map(|_| rand_seq(&mut rng, n)).collect();
            let mut ks = vec![Vec::new(); d];
            let mut got = vec![Vec::new(); d];
            for i in 0..n {
                let y: Vec<C> = (0..d).map(|j| ys[j][i]).collect();
                // k_n is a function of y_n only, produced after y_n.
                let k: Vec<C> = y.iter().map(|v| v * v + c((i as f64).sin(), 0.1)).collect();
                for j in 0..d {
                    ks[j].push(k[j]);
                }
                e.push_step(&y, &k).unwrap();
                for (j, s) in e.finalize_step().unwrap().into_iter().enumerate() {
                    got[j].push(s);
                }
            }
            for j in 0..d {
                let want = direct_sums(&ks[j], &ys[j]).unwrap();
                assert!(max_rel_err(&got[j], &want) < 1e-12, "n={n} j={j}");
            }
        }
    }

    #[test]
    fn fixed_kernel_both_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 300;
        let k = rand_seq(&mut rng, n);
        let y = rand_seq(&mut rng, n);
        let want = direct_sums(&k, &y).unwrap();
        for v in [Variant::Hls, Variant::KernelNonlinear] {
            let mut e = HistoryEngine::with_fixed_kernel(plan(n, v), 1, KernelLayout::Shared, vec![k.clone()]).unwrap();
            assert!(e.push_step(&[y[0]], &[k[0]]).is_err());
            let got: Vec<C> = y
                .iter()
                .map(|&v| {
                    e.push_y(&[v]).unwrap();
                    e.finalize_step().unwrap()[0]
                })
                .collect();
            assert!(max_rel_err(&got, &want) < 1e-12, "{v:?}");
        }
    }

    #[test]
    fn shared_layout_matches_per_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, d) = (200, 4);
        let mut shared = HistoryEngine::new(plan(n, Variant::KernelNonlinear), d, KernelLayout::Shared).unwrap();
        let mut per = HistoryEngine::new(plan(n, Variant::KernelNonlinear), d, KernelLayout::PerComponent).unwrap();
        for _ in 0..n {
            let y = rand_seq(&mut rng, d);
            let k = rand_seq(&mut rng, 1);
            shared.push_step(&y, &k).unwrap();
            per.push_step(&y, &vec![k[0]; d]).unwrap();
            let a = shared.finalize_step().unwrap();
            let b = per.finalize_step().unwrap();
            assert!(max_rel_err(&a, &b) < 1e-14);
        }
    }

    #[test]
    #[should_panic(expected = "plan bug")]
    fn forward_kernel_read_is_caught() {
        let p = BlockPlan::build(64, 3, Variant::Hls)
            .unwrap()
            .with_variant(Variant::KernelNonlinear);
        let mut e = HistoryEngine::new(p, 1, KernelLayout::PerComponent).unwrap();
        for _ in 0..64 {
            e.push_step(&[c(1.0, 0.0)], &[c(1.0, 0.0)]).unwrap();
            e.finalize_step().unwrap();
        }
    }

    #[test]
    fn histories_are_exposed_up_to_cursor() {
        let mut e = HistoryEngine::new(plan(10, Variant::KernelNonlinear), 1, KernelLayout::Shared).unwrap();
        for i in 0..4 {
            e.push_step(&[c(i as f64, 0.0)], &[c(0.0, i as f64)]).unwrap();
            e.finalize_step().unwrap();
        }
        assert_eq!(e.cursor(), 4);
        assert_eq!(e.y_hist(0).len(), 4);
        assert_eq!(e.k_hist(0)[3], c(0.0, 3.0));
    }
}
