//! Scalar abstraction for the numeric kernel.
//!
//! Everything in [`crate::numeric`] is generic over `Scalar` so the kernel can
//! be exercised at f32 or f64; the recognition pipeline itself is pinned to
//! f64 through the aliases at the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps};

pub trait Scalar:
    Float + FromPrimitive + NumAssignOps + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossless-enough conversion from f64 for constants baked into algorithms
    /// (learning-rate schedules, epsilons, positional encodings).
    fn from_f64_c(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable in scalar type")
    }

    fn from_usize_c(v: usize) -> Self {
        Self::from_usize(v).expect("usize representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
