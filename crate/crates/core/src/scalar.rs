//! Scalar abstraction shared by every numeric module.
//!
//! All estimation code is written against [`Real`], which is implemented for
//! `f32` and `f64`. Training runs in `f32`; gradient checks, Gauss-Newton
//! refinement and bounds are normally evaluated in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar usable throughout the crate.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + rustfft::FftNum
    + Default
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Width of the little-endian encoding in bytes.
    const BYTES: usize;

    fn write_le(self, out: &mut Vec<u8>);

    /// Decodes from exactly [`Real::BYTES`] little-endian bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const BYTES: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const BYTES: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

/// Converts a `usize` into `T`.
#[inline]
pub fn from_usize<T: Real>(n: usize) -> T {
    T::from_usize(n).expect("usize representable in scalar type")
}

#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// `exp(j·2π·cycles)`, reducing the argument to a fractional cycle first so
/// single precision keeps its accuracy for large phase arguments.
#[inline]
pub fn cis_cycles<T: Real>(cycles: T) -> Complex<T> {
    let frac = cycles - cycles.round();
    let phase = lit::<T>(2.0) * T::PI() * frac;
    Complex::new(phase.cos(), phase.sin())
}

/// Wraps a value into `[-0.5, 0.5)`.
#[inline]
pub fn wrap_half<T: Real>(x: T) -> T {
    let half = lit::<T>(0.5);
    let w = x - (x + half).floor();
    if w >= half {
        w - T::one()
    } else {
        w
    }
}
