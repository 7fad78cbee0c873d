//! Scalar abstraction shared by the numeric modules.
//!
//! Everything that does real arithmetic (network, spectra, EMD, metrics) is
//! written against [`Scalar`] so the same code runs in `f32` for training and
//! in `f64` for gradient checks and oracles.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + LinalgScalar
    + ScalarOperand
    + rustfft::FftNum
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; every literal in the crate goes through here.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 is representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::lit(v as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
