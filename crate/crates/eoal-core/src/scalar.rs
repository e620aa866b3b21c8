//! Floating-point scalar abstraction for the numeric core.
//!
//! Every numeric module in this crate is generic over [`Scalar`] so the same
//! code runs in `f32` or `f64`. The experiment harness and CLI pin `f64`
//! through the aliases at the crate root; gradient-check tolerances assume
//! double precision.

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + core::ops::AddAssign
    + core::ops::SubAssign
    + core::ops::MulAssign
    + core::ops::DivAssign
    + core::iter::Sum
    + core::fmt::Debug
    + core::fmt::Display
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` literal into `T`. Panics only on non-representable
/// values, which never occur for the constants used in this crate.
#[inline]
pub fn real<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("literal must be representable in the scalar type")
}
