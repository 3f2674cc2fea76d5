//! FFT-based application of circulant and Toeplitz-structured blocks.
//!
//! A Toeplitz block of shape `nrows x ncols` is stored by its distinct
//! diagonals, ordered from the top-right diagonal to the bottom-left one.
//! For square and triangular shapes the symbol holds `nrows + ncols - 1`
//! values and entry `(i, j)` is `symbol[i - j + ncols - 1]`. For a
//! parallelogram (row `i` is nonzero on columns `i .. i + bw`) the symbol
//! holds the `bw = ncols - nrows + 1` band values and entry `(i, j)` is
//! `symbol[bw - 1 - (j - i)]`.
//!
//! Every product is evaluated by embedding the block in a power-of-two
//! circulant and running one forward/inverse FFT pair, so a block costs
//! `O((nrows + ncols) log(nrows + ncols))`.

use std::sync::Arc;

use num_complex::Complex;
use num_traits::Zero;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::scalar::{Cplx, Real};

/// Transform direction. `Forward` uses the kernel `exp(-2 pi i jk / n)`;
/// `Inverse` includes the `1/n` normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Sparsity pattern of a Toeplitz block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    Square,
    LowerTriangular,
    UpperTriangular,
    Parallelogram,
}

impl Shape {
    pub fn as_str(self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::LowerTriangular => "lower_triangular",
            Shape::UpperTriangular => "upper_triangular",
            Shape::Parallelogram => "parallelogram",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "square" => Some(Shape::Square),
            "lower_triangular" => Some(Shape::LowerTriangular),
            "upper_triangular" => Some(Shape::UpperTriangular),
            "parallelogram" => Some(Shape::Parallelogram),
            _ => None,
        }
    }

    /// Expected symbol length for a block of this shape.
    pub fn symbol_len(self, nrows: usize, ncols: usize) -> Option<usize> {
        if nrows == 0 || ncols == 0 {
            return None;
        }
        match self {
            Shape::Parallelogram => (ncols >= nrows).then(|| ncols - nrows + 1),
            _ => Some(nrows + ncols - 1),
        }
    }
}

/// A Toeplitz-structured block with an explicit symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct ToeplitzBlock<T: Real> {
    pub shape: Shape,
    pub nrows: usize,
    pub ncols: usize,
    pub symbol: Vec<Cplx<T>>,
}

impl<T: Real> ToeplitzBlock<T> {
    pub fn new(shape: Shape, nrows: usize, ncols: usize, symbol: Vec<Cplx<T>>) -> Result<Self> {
        let want = shape.symbol_len(nrows, ncols).ok_or_else(|| {
            Error::Shape(format!(
                "{} block with {nrows} rows and {ncols} columns",
                shape.as_str()
            ))
        })?;
        if symbol.len() != want {
            return Err(Error::Shape(format!(
                "{} {nrows}x{ncols} block needs a symbol of length {want}, got {}",
                shape.as_str(),
                symbol.len()
            )));
        }
        Ok(Self {
            shape,
            nrows,
            ncols,
            symbol,
        })
    }

    /// Band width of a parallelogram block.
    pub fn bandwidth(&self) -> usize {
        match self.shape {
            Shape::Parallelogram => self.symbol.len(),
            _ => self.nrows + self.ncols - 1,
        }
    }

    /// Entry `(i, j)` including the shape mask.
    pub fn entry(&self, i: usize, j: usize) -> Cplx<T> {
        let zero = Cplx::zero();
        match self.shape {
            Shape::Parallelogram => {
                if j < i || j - i >= self.symbol.len() {
                    zero
                } else {
                    self.symbol[self.symbol.len() - 1 - (j - i)]
                }
            }
            shape => {
                let masked = match shape {
                    Shape::LowerTriangular => j > i,
                    Shape::UpperTriangular => i > j,
                    _ => false,
                };
                if masked {
                    zero
                } else {
                    self.symbol[i + self.ncols - 1 - j]
                }
            }
        }
    }
}

/// Explicit `nrows x ncols` matrix of a block (test oracle support).
pub fn densify<T: Real>(block: &ToeplitzBlock<T>) -> Vec<Vec<Cplx<T>>> {
    (0..block.nrows)
        .map(|i| (0..block.ncols).map(|j| block.entry(i, j)).collect())
        .collect()
}

/// Dense matrix-vector product used as an oracle.
pub fn dense_matvec<T: Real>(a: &[Vec<Cplx<T>>], x: &[Cplx<T>]) -> Vec<Cplx<T>> {
    a.iter()
        .map(|row| row.iter().zip(x).fold(Cplx::zero(), |s, (a, x)| s + *a * *x))
        .collect()
}

/// Symbol transformed once and reusable for several input vectors.
#[derive(Debug, Clone)]
pub struct PreparedBlock<T: Real> {
    shape: Shape,
    nrows: usize,
    ncols: usize,
    spectrum: Vec<Cplx<T>>,
}

impl<T: Real> PreparedBlock<T> {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn fft_len(&self) -> usize {
        self.spectrum.len()
    }
}

/// FFT planner plus scratch space for repeated block products.
///
/// Plans are cached by length, so a single `Convolver` should be reused for
/// the whole lifetime of a time-stepping loop.
pub struct Convolver<T: Real> {
    planner: FftPlanner<T>,
    buf: Vec<Cplx<T>>,
    scratch: Vec<Cplx<T>>,
}

impl<T: Real> Default for Convolver<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> std::fmt::Debug for Convolver<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Convolver").finish_non_exhaustive()
    }
}

impl<T: Real> Convolver<T> {
    pub fn new() -> Self {
        Self {
            planner: FftPlanner::new(),
            buf: Vec::new(),
            scratch: Vec::new(),
        }
    }

    fn plan(&mut self, n: usize, dir: Direction) -> Arc<dyn Fft<T>> {
        match dir {
            Direction::Forward => self.planner.plan_fft_forward(n),
            Direction::Inverse => self.planner.plan_fft_inverse(n),
        }
    }

    fn run(&mut self, data: &mut [Cplx<T>], dir: Direction) {
        let n = data.len();
        let plan = self.plan(n, dir);
        let need = plan.get_inplace_scratch_len();
        if self.scratch.len() < need {
            self.scratch.resize(need, Cplx::zero());
        }
        plan.process_with_scratch(data, &mut self.scratch[..need]);
        if dir == Direction::Inverse {
            let inv = T::one() / T::of_usize(n);
            data.iter_mut().for_each(|z| *z = z.scale(inv));
        }
    }

    /// In-place transform of a power-of-two length buffer.
    pub fn fft_in_place(&mut self, data: &mut [Cplx<T>], dir: Direction) -> Result<()> {
        if !data.len().is_power_of_two() {
            return Err(Error::Length(data.len()));
        }
        self.run(data, dir);
        Ok(())
    }

    pub fn fft(&mut self, x: &[Cplx<T>], dir: Direction) -> Result<Vec<Cplx<T>>> {
        let mut out = x.to_vec();
        self.fft_in_place(&mut out, dir)?;
        Ok(out)
    }

    /// `b = C x` for the circulant with first column `first_col`.
    ///
    /// Power-of-two lengths use one FFT pair directly. Other lengths are
    /// computed as a linear convolution in a power-of-two buffer of length
    /// at least `2n - 1`, folded back modulo `n`.
    pub fn circulant_matvec(&mut self, first_col: &[Cplx<T>], x: &[Cplx<T>]) -> Result<Vec<Cplx<T>>> {
        let n = first_col.len();
        if n == 0 || x.len() != n {
            return Err(Error::Dimension(format!(
                "circulant column has length {n}, vector has length {}",
                x.len()
            )));
        }
        let p = if n.is_power_of_two() {
            n
        } else {
            (2 * n - 1).next_power_of_two()
        };
        let mut c = vec![Cplx::zero(); p];
        c[..n].copy_from_slice(first_col);
        let mut v = vec![Cplx::zero(); p];
        v[..n].copy_from_slice(x);
        self.run(&mut c, Direction::Forward);
        self.run(&mut v, Direction::Forward);
        v.iter_mut().zip(&c).for_each(|(a, b)| *a *= *b);
        self.run(&mut v, Direction::Inverse);
        if p == n {
            return Ok(v);
        }
        let mut b: Vec<Cplx<T>> = v[..n].to_vec();
        for i in 0..n - 1 {
            b[i] += v[i + n];
        }
        Ok(b)
    }

    /// Transforms a block symbol so it can be applied repeatedly.
    pub fn prepare(
        &mut self,
        shape: Shape,
        nrows: usize,
        ncols: usize,
        symbol: &[Cplx<T>],
    ) -> Result<PreparedBlock<T>> {
        let want = shape
            .symbol_len(nrows, ncols)
            .ok_or_else(|| Error::Shape(format!("{} block {nrows}x{ncols}", shape.as_str())))?;
        if symbol.len() != want {
            return Err(Error::Shape(format!(
                "{} {nrows}x{ncols} block needs a symbol of length {want}, got {}",
                shape.as_str(),
                symbol.len()
            )));
        }
        let p = match shape {
            Shape::Parallelogram => ncols.next_power_of_two(),
            _ => (nrows + ncols - 1).next_power_of_two(),
        };
        let mut c = vec![Cplx::zero(); p];
        match shape {
            Shape::Parallelogram => {
                // Row 0 of the circulant is the band followed by zeros.
                let bw = symbol.len();
                for off in 0..bw {
                    c[(p - off) % p] = symbol[bw - 1 - off];
                }
            }
            _ => {
                // Lag d = i - j lands at c[d mod p].
                for (idx, s) in symbol.iter().enumerate() {
                    let d = idx as isize - (ncols as isize - 1);
                    let keep = match shape {
                        Shape::LowerTriangular => d >= 0,
                        Shape::UpperTriangular => d <= 0,
                        _ => true,
                    };
                    if keep {
                        c[d.rem_euclid(p as isize) as usize] = *s;
                    }
                }
            }
        }
        self.run(&mut c, Direction::Forward);
        Ok(PreparedBlock {
            shape,
            nrows,
            ncols,
            spectrum: c,
        })
    }

    /// Adds `A x` into `out` (length `nrows`).
    pub fn apply_add(&mut self, block: &PreparedBlock<T>, x: &[Cplx<T>], out: &mut [Cplx<T>]) -> Result<()> {
        if x.len() != block.ncols || out.len() != block.nrows {
            return Err(Error::Dimension(format!(
                "{} {}x{} block applied to vector of length {} into {}",
                block.shape.as_str(),
                block.nrows,
                block.ncols,
                x.len(),
                out.len()
            )));
        }
        let p = block.spectrum.len();
        let mut buf = std::mem::take(&mut self.buf);
        buf.clear();
        buf.resize(p, Cplx::zero());
        buf[..x.len()].copy_from_slice(x);
        self.run(&mut buf, Direction::Forward);
        buf.iter_mut().zip(&block.spectrum).for_each(|(a, b)| *a *= *b);
        self.run(&mut buf, Direction::Inverse);
        out.iter_mut().zip(&buf).for_each(|(o, v)| *o += *v);
        self.buf = buf;
        Ok(())
    }

    /// Product of a square or triangular Toeplitz block with `x`.
    pub fn toeplitz_matvec(&mut self, block: &ToeplitzBlock<T>, x: &[Cplx<T>]) -> Result<Vec<Cplx<T>>> {
        if block.shape == Shape::Parallelogram {
            return Err(Error::Shape(
                "parallelogram blocks go through parallelogram_matvec".into(),
            ));
        }
        let prep = self.prepare(block.shape, block.nrows, block.ncols, &block.symbol)?;
        let mut out = vec![Cplx::zero(); block.nrows];
        self.apply_add(&prep, x, &mut out)?;
        Ok(out)
    }

    /// Product of a parallelogram block with `x`; no input padding beyond
    /// the power-of-two round-up of `ncols`.
    pub fn parallelogram_matvec(&mut self, block: &ToeplitzBlock<T>, x: &[Cplx<T>]) -> Result<Vec<Cplx<T>>> {
        if block.shape != Shape::Parallelogram {
            return Err(Error::Shape(format!(
                "{} block passed to parallelogram_matvec",
                block.shape.as_str()
            )));
        }
        let prep = self.prepare(block.shape, block.nrows, block.ncols, &block.symbol)?;
        let mut out = vec![Cplx::zero(); block.nrows];
        self.apply_add(&prep, x, &mut out)?;
        Ok(out)
    }
}

pub fn fft<T: Real>(x: &[Cplx<T>], dir: Direction) -> Result<Vec<Cplx<T>>> {
    Convolver::new().fft(x, dir)
}

pub fn circulant_matvec<T: Real>(first_col: &[Cplx<T>], x: &[Cplx<T>]) -> Result<Vec<Cplx<T>>> {
    Convolver::new().circulant_matvec(first_col, x)
}

pub fn toeplitz_matvec<T: Real>(block: &ToeplitzBlock<T>, x: &[Cplx<T>]) -> Result<Vec<Cplx<T>>> {
    Convolver::new().toeplitz_matvec(block, x)
}

pub fn parallelogram_matvec<T: Real>(block: &ToeplitzBlock<T>, x: &[Cplx<T>]) -> Result<Vec<Cplx<T>>> {
    Convolver::new().parallelogram_matvec(block, x)
}

/// Converts real pairs to complex values (test helper).
pub fn cvec<T: Real>(re: &[f64]) -> Vec<Cplx<T>> {
    re.iter().map(|&r| Complex::new(T::of(r), T::zero())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::max_rel_err;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type C = Complex<f64>;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<C> {
        (0..n)
            .map(|_| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    fn dense_dft(x: &[C]) -> Vec<C> {
        let n = x.len();
        (0..n)
            .map(|j| {
                x.iter().enumerate().fold(C::zero(), |s, (k, v)| {
                    let ang = -2.0 * std::f64::consts::PI * (j * k) as f64 / n as f64;
                    s + v * C::from_polar(1.0, ang)
                })
            })
            .collect()
    }

    #[test]
    fn fft_delta_and_constant() {
        let out = fft(&cvec::<f64>(&[1.0, 0.0, 0.0, 0.0]), Direction::Forward).unwrap();
        assert_eq!(out, cvec(&[1.0, 1.0, 1.0, 1.0]));
        let out = fft(&cvec::<f64>(&[1.0, 1.0, 1.0, 1.0]), Direction::Forward).unwrap();
        assert!(max_rel_err(&out, &cvec(&[4.0, 0.0, 0.0, 0.0])) < 1e-15);
    }

    #[test]
    fn fft_round_trip_and_dft_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_vec(&mut rng, 8);
        let fx = fft(&x, Direction::Forward).unwrap();
        assert!(max_rel_err(&fx, &dense_dft(&x)) < 1e-14);
        let back = fft(&fx, Direction::Inverse).unwrap();
        assert!(max_rel_err(&back, &x) < 1e-13);
    }

    #[test]
    fn fft_rejects_non_power_of_two() {
        assert_eq!(
            fft(&cvec::<f64>(&[1.0, 2.0, 3.0]), Direction::Forward),
            Err(Error::Length(3))
        );
    }

    fn dense_circulant(c: &[C], x: &[C]) -> Vec<C> {
        let n = c.len();
        (0..n)
            .map(|i| (0..n).fold(C::zero(), |s, j| s + c[(i + n - j) % n] * x[j]))
            .collect()
    }

    #[test]
    fn circulant_examples() {
        let c = cvec::<f64>(&[1.0, 0.0, 0.0, 0.0]);
        let x = cvec(&[5.0, 6.0, 7.0, 8.0]);
        assert!(max_rel_err(&circulant_matvec(&c, &x).unwrap(), &x) < 1e-15);

        let c = cvec::<f64>(&[1.0, 2.0, 3.0, 4.0]);
        let e0 = cvec(&[1.0, 0.0, 0.0, 0.0]);
        assert!(max_rel_err(&circulant_matvec(&c, &e0).unwrap(), &c) < 1e-15);

        let ones = cvec(&[1.0; 4]);
        let want = dense_circulant(&c, &ones);
        assert!(max_rel_err(&want, &cvec(&[10.0; 4])) < 1e-15);
        assert!(max_rel_err(&circulant_matvec(&c, &ones).unwrap(), &want) < 1e-14);
    }

    #[test]
    fn circulant_non_power_of_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [1usize, 3, 5, 7, 12, 100] {
            let c = rand_vec(&mut rng, n);
            let x = rand_vec(&mut rng, n);
            let got = circulant_matvec(&c, &x).unwrap();
            assert!(max_rel_err(&got, &dense_circulant(&c, &x)) < 1e-13, "n={n}");
        }
        assert!(matches!(
            circulant_matvec(&cvec::<f64>(&[1.0, 2.0]), &cvec(&[1.0])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn toeplitz_two_by_two() {
        // First column (1, 2), first row (1, 3): symbol is (3, 1, 2).
        let b = ToeplitzBlock::<f64>::new(Shape::Square, 2, 2, cvec(&[3.0, 1.0, 2.0])).unwrap();
        let got = toeplitz_matvec(&b, &cvec(&[1.0, 1.0])).unwrap();
        let want = dense_matvec(&densify(&b), &cvec(&[1.0, 1.0]));
        assert!(max_rel_err(&want, &cvec(&[4.0, 3.0])) < 1e-15);
        assert!(max_rel_err(&got, &want) < 1e-15);
    }

    #[test]
    fn lower_triangular_identity() {
        let mut sym = vec![C::zero(); 7];
        // Junk above the diagonal is masked out.
        sym[0] = C::new(9.0, 9.0);
        sym[3] = C::new(1.0, 0.0);
        let b = ToeplitzBlock::new(Shape::LowerTriangular, 4, 4, sym).unwrap();
        let x = cvec(&[1.5, -2.0, 3.0, 0.25]);
        assert!(max_rel_err(&toeplitz_matvec(&b, &x).unwrap(), &x) < 1e-15);
    }

    #[test]
    fn densify_triangular_and_letter_layout() {
        let (d, e) = (C::new(4.0, 0.0), C::new(5.0, 0.0));
        let b = ToeplitzBlock::new(Shape::LowerTriangular, 2, 2, vec![C::new(7.0, 0.0), d, e]).unwrap();
        assert_eq!(densify(&b), vec![vec![d, C::zero()], vec![e, d]]);

        // Letters a..g as 1..7: the bolded 4x4 block has rows
        // (d c b a), (e d c b), (f e d c), (g f e d).
        let sym = cvec::<f64>(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let b = ToeplitzBlock::new(Shape::Square, 4, 4, sym).unwrap();
        let want: Vec<Vec<C>> = [
            [4.0, 3.0, 2.0, 1.0],
            [5.0, 4.0, 3.0, 2.0],
            [6.0, 5.0, 4.0, 3.0],
            [7.0, 6.0, 5.0, 4.0],
        ]
        .iter()
        .map(|r| cvec(r))
        .collect();
        assert_eq!(densify(&b), want);
    }

    #[test]
    fn densify_parallelogram_layout() {
        // Band (a, b, c, d) = (1, 2, 3, 4); row i reads d c b a from column i.
        let b = ToeplitzBlock::new(Shape::Parallelogram, 4, 7, cvec(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        let want: Vec<Vec<C>> = [
            [4.0, 3.0, 2.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, 4.0, 3.0, 2.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 4.0, 3.0, 2.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 4.0, 3.0, 2.0, 1.0],
        ]
        .iter()
        .map(|r| cvec(r))
        .collect();
        assert_eq!(densify(&b), want);
    }

    #[test]
    fn parallelogram_examples() {
        let x: Vec<C> = cvec(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let id = ToeplitzBlock::new(Shape::Parallelogram, 4, 7, cvec(&[0.0, 0.0, 0.0, 1.0])).unwrap();
        assert!(max_rel_err(&parallelogram_matvec(&id, &x).unwrap(), &x[..4]) < 1e-15);

        let ones = ToeplitzBlock::<f64>::new(Shape::Parallelogram, 4, 7, cvec(&[1.0; 4])).unwrap();
        let x1 = cvec(&[1.0; 7]);
        let want = dense_matvec(&densify(&ones), &x1);
        assert_eq!(want, cvec(&[4.0; 4]));
        assert!(max_rel_err(&parallelogram_matvec(&ones, &x1).unwrap(), &want) < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = ToeplitzBlock::new(Shape::Parallelogram, 8, 15, rand_vec(&mut rng, 8)).unwrap();
        let x = rand_vec(&mut rng, 15);
        let got = parallelogram_matvec(&b, &x).unwrap();
        assert!(max_rel_err(&got, &dense_matvec(&densify(&b), &x)) < 1e-13);
    }

    #[test]
    fn shape_errors() {
        assert!(ToeplitzBlock::<f64>::new(Shape::Parallelogram, 4, 3, cvec(&[1.0])).is_err());
        assert!(ToeplitzBlock::<f64>::new(Shape::Square, 2, 2, cvec(&[1.0])).is_err());
        let p = ToeplitzBlock::new(Shape::Parallelogram, 4, 7, cvec::<f64>(&[1.0; 4])).unwrap();
        assert!(matches!(toeplitz_matvec(&p, &cvec(&[1.0; 7])), Err(Error::Shape(_))));
        let s = ToeplitzBlock::new(Shape::Square, 2, 2, cvec::<f64>(&[1.0; 3])).unwrap();
        assert!(matches!(
            parallelogram_matvec(&s, &cvec(&[1.0; 2])),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            toeplitz_matvec(&s, &cvec(&[1.0; 3])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn random_lower_triangular_16() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = ToeplitzBlock::new(Shape::LowerTriangular, 16, 16, rand_vec(&mut rng, 31)).unwrap();
        let x = rand_vec(&mut rng, 16);
        let got = toeplitz_matvec(&b, &x).unwrap();
        assert!(max_rel_err(&got, &dense_matvec(&densify(&b), &x)) < 1e-13);
    }

    #[test]
    fn single_precision_path() {
        let b = ToeplitzBlock::new(Shape::Square, 2, 2, cvec::<f32>(&[3.0, 1.0, 2.0])).unwrap();
        let got = toeplitz_matvec(&b, &cvec(&[1.0, 1.0])).unwrap();
        assert!(max_rel_err(&got, &cvec(&[4.0, 3.0])) < 1e-6);
    }

    fn shape_strategy() -> impl Strategy<Value = Shape> {
        prop_oneof![
            Just(Shape::Square),
            Just(Shape::LowerTriangular),
            Just(Shape::UpperTriangular),
            Just(Shape::Parallelogram),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn fast_matches_dense(shape in shape_strategy(), nrows in 1usize..200, extra in 0usize..200, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ncols = match shape {
                Shape::Parallelogram => nrows + extra,
                _ => 1 + extra,
            };
            let len = shape.symbol_len(nrows, ncols).unwrap();
            let b = ToeplitzBlock::new(shape, nrows, ncols, rand_vec(&mut rng, len)).unwrap();
            let x = rand_vec(&mut rng, ncols);
            let mut conv = Convolver::new();
            let got = match shape {
                Shape::Parallelogram => conv.parallelogram_matvec(&b, &x).unwrap(),
                _ => conv.toeplitz_matvec(&b, &x).unwrap(),
            };
            let want = dense_matvec(&densify(&b), &x);
            prop_assert!(max_rel_err(&got, &want) <= 1e-12);
        }

        #[test]
        fn matvec_is_linear(n in 1usize..64, seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let blk = ToeplitzBlock::new(Shape::Square, n, n, rand_vec(&mut rng, 2 * n - 1)).unwrap();
            let x = rand_vec(&mut rng, n);
            let z = rand_vec(&mut rng, n);
            let comb: Vec<C> = x.iter().zip(&z).map(|(x, z)| x * a + z * b).collect();
            let mut conv = Convolver::new();
            let lhs = conv.toeplitz_matvec(&blk, &comb).unwrap();
            let ax = conv.toeplitz_matvec(&blk, &x).unwrap();
            let az = conv.toeplitz_matvec(&blk, &z).unwrap();
            let rhs: Vec<C> = ax.iter().zip(&az).map(|(x, z)| x * a + z * b).collect();
            prop_assert!(max_rel_err(&lhs, &rhs) <= 1e-12);
        }
    }

    #[test]
    fn large_blocks_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for shape in [Shape::Square, Shape::LowerTriangular, Shape::UpperTriangular] {
            let n = 1024;
            let b = ToeplitzBlock::new(shape, n, n, rand_vec(&mut rng, 2 * n - 1)).unwrap();
            let x = rand_vec(&mut rng, n);
            let got = toeplitz_matvec(&b, &x).unwrap();
            assert!(max_rel_err(&got, &dense_matvec(&densify(&b), &x)) <= 1e-12);
        }
        let b = ToeplitzBlock::new(Shape::Parallelogram, 512, 1024, rand_vec(&mut rng, 513)).unwrap();
        let x = rand_vec(&mut rng, 1024);
        let got = parallelogram_matvec(&b, &x).unwrap();
        assert!(max_rel_err(&got, &dense_matvec(&densify(&b), &x)) <= 1e-12);
    }
}
