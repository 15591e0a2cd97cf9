//! Loop-group machinery for constant-mean-curvature surfaces with Delaunay ends.
//!
//! The numerical core is generic over the real scalar (`f32` or `f64`); the
//! `f64` aliases below are what the command-line tool and the tests use.

pub mod delaunay;
pub mod dressing;
pub mod surface;
pub mod error;
pub mod io;
pub mod iwasawa;
pub mod linalg;
pub mod potential;
pub mod loopcore;
pub mod ode;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Complex64 = num_complex::Complex<f64>;
pub type Mat2 = linalg::M2<f64>;
pub type Loop = loopcore::MatrixLoop<f64>;
