//! Floating point scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar type the networks, embedder and graph weights are generic over.
///
/// Implemented for `f32` and `f64`. Persistence always goes through `f64`,
/// which represents every `f32` exactly, so save/load is lossless for both.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Byte width used in binary persistence.
    const WIDTH: u8;

    fn from_f64_lossy(x: f64) -> Self;

    fn to_f64_exact(self) -> f64;

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const WIDTH: u8 = 4;

    fn from_f64_lossy(x: f64) -> Self {
        x as f32
    }

    fn to_f64_exact(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const WIDTH: u8 = 8;

    fn from_f64_lossy(x: f64) -> Self {
        x
    }

    fn to_f64_exact(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

/// Shorthand for converting an `f64` literal into `T`.
#[inline]
pub(crate) fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64_lossy(x)
}

/// Dot product of two equal-length slices.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}
