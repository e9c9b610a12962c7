use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use serde::{de::DeserializeOwned, Serialize};

/// Real scalar the numerical core is generic over.
///
/// Implemented for `f32` and `f64`. Statistics, tolerances and random draws
/// are produced in `f64` and converted with [`Scalar::lit`].
pub trait Scalar:
    RealField
    + Copy
    + Debug
    + Display
    + LowerExp
    + Default
    + FromPrimitive
    + ToPrimitive
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }

    #[inline]
    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("count representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
