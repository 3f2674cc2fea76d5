//! Scalar abstraction shared by the numerical layers.

use std::fmt::{Debug, Display, LowerExp};

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use rustfft::FftNum;

/// Real floating point type the solver can run in (`f32` or `f64`).
///
/// Everything below the physics layer is written against this trait so the
/// same code path can be exercised in single precision.
pub trait Real:
    Float + FloatConst + NumAssign + FromPrimitive + ToPrimitive + FftNum + Default + Debug + Display + LowerExp
{
    /// Lossy conversion from `f64`, used for tabulated constants.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable")
    }

    /// Conversion from a count.
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Complex number over a [`Real`] scalar.
pub type Cplx<T> = Complex<T>;

/// Imaginary unit.
#[inline]
pub fn imag_unit<T: Real>() -> Cplx<T> {
    Complex::new(T::zero(), T::one())
}

/// `true` when both parts are finite.
#[inline]
pub fn is_finite<T: Real>(z: Cplx<T>) -> bool {
    z.re.is_finite() && z.im.is_finite()
}

/// Largest modulus in a slice, zero for empty input.
pub fn max_abs<T: Real>(xs: &[Cplx<T>]) -> T {
    xs.iter().fold(T::zero(), |m, z| m.max(z.norm()))
}

/// Maximum relative deviation `max |a - b| / max(max |b|, tiny)`.
///
/// Normalizing by the reference's largest entry (rather than entrywise) keeps
/// the measure meaningful when the reference passes through zero.
pub fn max_rel_err<T: Real>(a: &[Cplx<T>], b: &[Cplx<T>]) -> T {
    assert_eq!(a.len(), b.len(), "length mismatch in max_rel_err");
    let scale = max_abs(b).max(T::min_positive_value());
    let diff = a.iter().zip(b).fold(T::zero(), |m, (x, y)| m.max((*x - *y).norm()));
    diff / scale
}
