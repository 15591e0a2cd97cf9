//! Scalar abstraction shared by every module.

use std::fmt::{Debug, Display};

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive};
use rustfft::FftNum;

/// Real field the library is generic over (`f32` or `f64`).
pub trait Real:
    Float + FloatConst + FromPrimitive + FftNum + Debug + Display + Default + Send + Sync + 'static
{
    /// Machine epsilon as a convenience.
    fn eps() -> Self {
        Self::epsilon()
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type C<T> = Complex<T>;

/// Lossless-enough literal conversion; every `f64` constant in the code goes through here.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal conversion")
}

#[inline]
pub fn cplx<T: Real>(re: f64, im: f64) -> C<T> {
    Complex::new(lit(re), lit(im))
}

#[inline]
pub fn re<T: Real>(x: T) -> C<T> {
    Complex::new(x, T::zero())
}

#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Square root with `Re ≥ 0`, and `Im ≥ 0` on the cut.
pub fn sqrt_re_pos<T: Real>(z: C<T>) -> C<T> {
    let s = z.sqrt();
    if s.re < T::zero() || (s.re == T::zero() && s.im < T::zero()) {
        -s
    } else {
        s
    }
}

/// `e^{iθ}`.
#[inline]
pub fn cis<T: Real>(theta: T) -> C<T> {
    Complex::new(theta.cos(), theta.sin())
}

/// Equispaced points on the circle of radius `r`.
pub fn circle_points<T: Real>(r: T, m: usize) -> Vec<C<T>> {
    let two_pi = T::PI() + T::PI();
    (0..m)
        .map(|j| cis(two_pi * T::from_usize(j).unwrap() / T::from_usize(m).unwrap()) * r)
        .collect()
}
