//! Generic floating point support.

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating point types the geometry, uncertainty, selection and metric code
/// is generic over. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into this type.
    fn lit(value: f64) -> Self;

    /// Lossy conversion to `f64`.
    fn as_f64(self) -> f64;
}

macro_rules! impl_scalar {
    ($f:ty) => {
        impl Scalar for $f {
            #[inline]
            fn lit(value: f64) -> Self {
                value as $f
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle<T: Scalar>(angle: T) -> T {
    let two_pi = T::PI() + T::PI();
    let mut a = angle % two_pi;
    if a <= -T::PI() {
        a = a + two_pi;
    } else if a > T::PI() {
        a = a - two_pi;
    }
    a
}
