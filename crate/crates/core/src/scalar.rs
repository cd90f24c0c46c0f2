//! Scalar abstraction shared by every numerical module.
//!
//! All linear algebra is carried out on `nalgebra` dense matrices whose
//! element type implements [`Scalar`]. Conversions to and from `f64` go
//! through `num-traits`, which is how random draws (always produced in
//! `f64`) and reported metrics (always stored in `f64`) cross the boundary.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point element type: `f32` or `f64`.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal or random draw.
    #[inline]
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 is representable in every Scalar")
    }

    /// Conversion used when reporting metrics.
    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    #[inline]
    fn of_usize(v: usize) -> Self {
        Self::of(v as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
