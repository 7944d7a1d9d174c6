//! Scalar abstraction shared by every numeric routine in the crate.

use num_traits::{Float, FromPrimitive, NumAssign};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating point scalar: `f32` or `f64`.
///
/// Tolerances are expressed relative to the precision of the type, so the
/// same algorithms run in either precision with sensible defaults.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Stopping tolerance for the min-norm hull solver (on squared norms).
    fn hull_tol() -> Self;
    /// Relative tolerance for treating a constraint as active.
    fn act_tol() -> Self;
    /// Relative feasibility tolerance after a reflection step.
    fn feas_tol() -> Self;

    #[inline]
    fn c(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("representable constant")
    }

    #[inline]
    fn f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    #[inline]
    fn two() -> Self {
        Self::one() + Self::one()
    }

    #[inline]
    fn half() -> Self {
        Self::c(0.5)
    }
}

impl Scalar for f64 {
    fn hull_tol() -> Self {
        1e-10
    }
    fn act_tol() -> Self {
        1e-8
    }
    fn feas_tol() -> Self {
        1e-9
    }
}

impl Scalar for f32 {
    fn hull_tol() -> Self {
        1e-5
    }
    fn act_tol() -> Self {
        1e-4
    }
    fn feas_tol() -> Self {
        2e-5
    }
}
