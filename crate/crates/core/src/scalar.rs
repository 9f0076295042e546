//! Numeric abstraction for rewards and accumulated utilities.
//!
//! Utilities only ever change by adding rewards, so any signed ring with an
//! ordering works. Selection probabilities are computed in `f64` regardless of
//! the storage type.

use std::fmt::{Debug, Display};

use num_traits::{FromPrimitive, Num, Signed, ToPrimitive};

/// Scalar type usable as a reward value and utility total.
pub trait Scalar:
    Num + Signed + Copy + PartialOrd + ToPrimitive + FromPrimitive + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion used by the softmax policies.
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Conversion from configuration values; `None` when the value is not
    /// representable (e.g. a fractional reward for an integer scalar).
    fn from_config(value: f64) -> Option<Self> {
        let v = Self::from_f64(value)?;
        if v.as_f64() == value {
            Some(v)
        } else {
            None
        }
    }
}

impl<T> Scalar for T where
    T: Num + Signed + Copy + PartialOrd + ToPrimitive + FromPrimitive + Debug + Display + Send + Sync + 'static
{
}
