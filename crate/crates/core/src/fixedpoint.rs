//! Q16.16 segment weights and a widened 48.16 accumulator.
//!
//! Weights are unsigned 32-bit Q16.16 values; a full user contribution is
//! `1 << 16`. The accumulator keeps the same 16 fractional bits in a 64-bit
//! word, so summation is plain integer addition and independent of order.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const FRAC_BITS: u32 = 16;
pub const ONE_RAW: u32 = 1 << FRAC_BITS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize)]
#[serde(transparent)]
pub struct WeightQ16(u32);

impl WeightQ16 {
    pub const fn from_raw(raw: u32) -> Self {
        WeightQ16(raw)
    }

    pub const fn raw(self) -> u32 {
        self.0
    }

    /// 1.0, the weight of one shortest-path traversal.
    pub const fn unit() -> Self {
        WeightQ16(ONE_RAW)
    }

    /// `floor(2^16 / h)`: the per-path weight when `h` historical paths share
    /// one user's contribution.
    pub fn reciprocal(h: u64) -> Result<Self> {
        if h == 0 {
            return Err(Error::ZeroHitCount);
        }
        Ok(WeightQ16((ONE_RAW as u64 / h) as u32))
    }

    pub fn to_float<T: Scalar>(self) -> T {
        T::from_u32(self.0).unwrap() / T::from_u32(ONE_RAW).unwrap()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize)]
#[serde(transparent)]
pub struct AccumQ48(u64);

impl AccumQ48 {
    pub const ZERO: AccumQ48 = AccumQ48(0);

    pub const fn from_raw(raw: u64) -> Self {
        AccumQ48(raw)
    }

    pub const fn raw(self) -> u64 {
        self.0
    }

    pub fn add(self, w: WeightQ16) -> Result<Self> {
        self.0
            .checked_add(w.0 as u64)
            .map(AccumQ48)
            .ok_or(Error::AccumulatorOverflow)
    }

    pub fn merge(self, other: AccumQ48) -> Result<Self> {
        self.0.checked_add(other.0).map(AccumQ48).ok_or(Error::AccumulatorOverflow)
    }

    /// `raw >= k * 2^16`, compared exactly.
    pub fn meets_threshold(self, k: u32) -> bool {
        self.0 as u128 >= (k as u128) << FRAC_BITS
    }

    pub fn to_float<T: Scalar>(self) -> T {
        T::from_u64(self.0).unwrap() / T::from_u32(ONE_RAW).unwrap()
    }
}

impl fmt::Display for AccumQ48 {
    /// Decimal rendering with five fractional digits.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.5}", self.to_float::<f64>())
    }
}

pub fn weight_unit() -> WeightQ16 {
    WeightQ16::unit()
}

pub fn reciprocal(h: u64) -> Result<WeightQ16> {
    WeightQ16::reciprocal(h)
}

pub fn accum_add(a: AccumQ48, w: WeightQ16) -> Result<AccumQ48> {
    a.add(w)
}

pub fn meets_threshold(a: AccumQ48, k: u32) -> bool {
    a.meets_threshold(k)
}
