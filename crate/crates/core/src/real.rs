//! Floating-point element types supported by the engine.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

/// Element precision of a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Fp32,
    #[default]
    Fp64,
}

impl DType {
    pub fn bytes(self) -> usize {
        match self {
            DType::Fp32 => 4,
            DType::Fp64 => 8,
        }
    }

    /// Machine epsilon as defined by `FLT_EPSILON` / `DBL_EPSILON`.
    pub fn epsilon(self) -> f64 {
        match self {
            DType::Fp32 => f32::EPSILON as f64,
            DType::Fp64 => f64::EPSILON,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::Fp32 => "fp32",
            DType::Fp64 => "fp64",
        }
    }
}

impl Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Scalar type usable as a field element.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    const DTYPE: DType;

    /// Number of representable values between `self` and `other`.
    ///
    /// Both zeros map to the same point; NaN is infinitely far from everything.
    fn ulp_distance(self, other: Self) -> u64;

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

// Map the sign-magnitude bit pattern onto a monotone integer line.
fn ordered64(bits: u64) -> i128 {
    if bits >> 63 == 1 {
        -((bits & !(1u64 << 63)) as i128)
    } else {
        bits as i128
    }
}

fn ordered32(bits: u32) -> i64 {
    if bits >> 31 == 1 {
        -((bits & !(1u32 << 31)) as i64)
    } else {
        bits as i64
    }
}

impl Real for f64 {
    const DTYPE: DType = DType::Fp64;

    fn ulp_distance(self, other: Self) -> u64 {
        if self.is_nan() || other.is_nan() {
            return u64::MAX;
        }
        let d = ordered64(self.to_bits()) - ordered64(other.to_bits());
        d.unsigned_abs().min(u64::MAX as u128) as u64
    }
}

impl Real for f32 {
    const DTYPE: DType = DType::Fp32;

    fn ulp_distance(self, other: Self) -> u64 {
        if self.is_nan() || other.is_nan() {
            return u64::MAX;
        }
        (ordered32(self.to_bits()) - ordered32(other.to_bits())).unsigned_abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjacent_values_are_one_ulp_apart() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        assert_eq!(a.ulp_distance(b), 1);
        assert_eq!(b.ulp_distance(a), 1);
        assert_eq!(0.0f64.ulp_distance(-0.0), 0);
        assert_eq!(f64::from_bits(1).ulp_distance(-f64::from_bits(1)), 2);
        assert_eq!(1.0f32.ulp_distance(f32::from_bits(1.0f32.to_bits() + 8)), 8);
    }

    #[test]
    fn nan_is_never_close() {
        assert_eq!(f64::NAN.ulp_distance(1.0), u64::MAX);
    }
}
