//! Scalar abstraction for coordinates, distances and edge lengths.

use std::fmt::{Debug, Display};
use std::str::FromStr;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point type usable for geometry: `f32` or `f64`.
///
/// Counting never goes through this type; segment weights live in the
/// integer fixed-point layer.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + FromStr
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Mean Earth radius in meters.
    fn earth_radius() -> Self;

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }
}

impl Scalar for f32 {
    fn earth_radius() -> Self {
        6_371_000.0
    }
}

impl Scalar for f64 {
    fn earth_radius() -> Self {
        6_371_000.0
    }
}
