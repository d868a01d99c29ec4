//! Floating-point abstraction shared by every numeric path in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, NumCast};

/// Real scalar the models and kernels are generic over: `f32` for training
/// speed, `f64` for reference and gradient-check paths.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumCast
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Short tag stored in checkpoints.
    const DTYPE: &'static str;

    fn erf(self) -> Self;

    /// Lossy-free for `f64`, exact widening for `f32`.
    fn to_f64_exact(self) -> f64;

    fn from_f64_lossy(v: f64) -> Self;

    /// Shorthand for literals inside generic code.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64_lossy(v)
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_f64_lossy(v as f64)
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    #[inline]
    fn erf(self) -> Self {
        libm::erff(self)
    }

    #[inline]
    fn to_f64_exact(self) -> f64 {
        self as f64
    }

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    #[inline]
    fn erf(self) -> Self {
        libm::erf(self)
    }

    #[inline]
    fn to_f64_exact(self) -> f64 {
        self
    }

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
}

/// Exact-erf GELU: `x * Phi(x)`.
#[inline]
pub fn gelu<S: Scalar>(x: S) -> S {
    let half = S::lit(0.5);
    x * half * (S::one() + (x * S::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// Derivative of [`gelu`]: `Phi(x) + x * phi(x)`.
#[inline]
pub fn gelu_grad<S: Scalar>(x: S) -> S {
    let half = S::lit(0.5);
    let cdf = half * (S::one() + (x * S::lit(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * S::lit(0.398_942_280_401_432_7);
    cdf + x * pdf
}
