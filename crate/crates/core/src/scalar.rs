//! Scalar abstraction so the core math runs over f32 or f64.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Scalar type for all matrix and simulation math. Implemented by `f32` and `f64`.
pub trait Scalar: RealField + FromPrimitive + ToPrimitive + Copy + Default {}

impl<T> Scalar for T where T: RealField + FromPrimitive + ToPrimitive + Copy + Default {}

/// Convert an `f64` constant into the working scalar type.
#[inline]
pub fn real<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("finite f64 constant must convert")
}

/// Lossy conversion back to `f64` for reporting and serialization.
#[inline]
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().expect("scalar must convert to f64")
}
