//! Scalar abstraction shared by every numerical module.
//!
//! All floating-point code in this crate is written against [`Real`], which is
//! satisfied by `f32` and `f64`. Exact checks (integer determinants, rational
//! conjugation identities) use the ring-level bounds from `num-traits` instead.

use nalgebra::RealField;
use num_complex::Complex;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar usable by the numerical routines.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Default {}

impl<T> Real for T where T: RealField + Copy + FromPrimitive + ToPrimitive + Default {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}

#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

#[inline]
pub fn from_usize<T: Real>(x: usize) -> T {
    lit(x as f64)
}

#[inline]
pub fn cabs<T: Real>(c: Complex<T>) -> T {
    c.re.hypot(c.im)
}

/// `e^{iθ}`.
#[inline]
pub fn cis<T: Real>(theta: T) -> Complex<T> {
    Complex::new(theta.cos(), theta.sin())
}

#[inline]
pub fn czero<T: Real>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

#[inline]
pub fn creal<T: Real>(x: T) -> Complex<T> {
    Complex::new(x, T::zero())
}

/// Multiplication by `i`.
#[inline]
pub fn times_i<T: Real>(c: Complex<T>) -> Complex<T> {
    Complex::new(-c.im, c.re)
}
