//! Imaginary-time representation and real-time Dyson equations for
//! equilibrium Green's functions, solved with `fastvie`.

pub mod dyson;
pub mod error;
pub mod imtime;
pub mod quad;

pub use error::{GreensError, Result};
pub use imtime::{DlrBasis, ImTimeFn};
