use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real number type the network core computes in.
///
/// Training and the wire format use `f32`; `f64` instantiations serve as
/// higher-precision references (finite-difference checks, averaging).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, rounding to nearest.
    fn from_f64_lossy(v: f64) -> Self;

    /// Widening (or identity) conversion to `f64`.
    fn to_f64_lossless(self) -> f64;
}

macro_rules! impl_scalar {
    ($($t:ty)*) => ($(
        impl Scalar for $t {
            #[inline]
            fn from_f64_lossy(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn to_f64_lossless(self) -> f64 {
                self as f64
            }
        }
    )*)
}

impl_scalar!(f32 f64);
