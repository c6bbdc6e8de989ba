//! Scalar abstraction for the numeric parts of the pipeline.
//!
//! Every geometric and statistical routine in this crate is generic over
//! [`Float`], so the same code runs in `f32` or `f64`. The crate root exposes
//! `f64` as the default instantiation; that is what the CLI pipeline uses.

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating-point scalar used throughout the pipeline.
pub trait Float:
    num_traits::Float
    + num_traits::FloatConst
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from `f64` literals and tabulated constants.
    fn from_f64_lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 literal converts to any Float")
    }

    /// Conversion from integer indices and counts.
    fn from_usize_lit(v: usize) -> Self {
        Self::from_usize(v).expect("usize converts to any Float")
    }
}

impl Float for f32 {}
impl Float for f64 {}
