//! Fast history sums and time stepping for Volterra integro-differential
//! equations with solution-dependent convolution kernels.

pub mod blockplan;
pub mod error;
pub mod fftconv;
pub mod history;
pub mod scalar;
pub mod stepper;
pub mod weights;

pub use blockplan::{BlockDescriptor, BlockPlan, Variant};
pub use error::{Error, Result};
pub use fftconv::{Convolver, Shape, ToeplitzBlock};
pub use history::{direct_sums, HistoryEngine, KernelLayout};
pub use scalar::{Cplx, Real};
pub use stepper::{solve, FnModel, Mode, Model, ProblemDef, Trajectory};
pub use weights::WeightTable;

pub type Complex64 = num_complex::Complex<f64>;
pub type Complex32 = num_complex::Complex<f32>;
