//! Scalar abstraction shared by the numeric kernel and the calibration code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type used by networks, losses and conformal scores.
///
/// Implemented for `f32` and `f64`. Model files always store `f64`, so a
/// scalar must convert losslessly into and out of `f64` for the values it
/// can represent.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 converts to any float scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("float scalar converts to f64")
    }

    fn lit(v: f64) -> Self {
        Self::from_f64_lossy(v)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Ascending ordering that panics on NaN; scores and samples are
/// validated finite before they are sorted.
pub(crate) fn total_cmp<T: Scalar>(a: &T, b: &T) -> std::cmp::Ordering {
    a.partial_cmp(b).expect("NaN in ordered scalar data")
}
