//! Scalar abstraction: all value math is generic over `f32`/`f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar used for values, rewards, and probabilities.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` constant into the working scalar type.
///
/// Panics only if the target type cannot represent any `f64` at all, which
/// does not happen for `f32`/`f64`.
#[inline]
pub fn real<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 constant must convert into the scalar type")
}
