//! Scalar abstractions.
//!
//! The floating-point solvers are written against [`Scalar`], implemented for
//! `f32` and `f64`. The dense simplex in [`crate::lp`] is written against
//! [`LpField`], which is additionally implemented for exact big rationals.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Float, FromPrimitive, One, Signed, ToPrimitive, Zero};

/// Floating point scalar used by every numerical routine in the crate.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + for<'a> Sum<&'a Self>
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
    /// Largest accepted drift of a weight vector's sum away from one.
    const NORMALIZE_TOL: f64;
    /// Coordinate tolerance under which two support points are the same point.
    const POINT_TOL: f64;

    #[inline]
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }
}

impl Scalar for f64 {
    const NORMALIZE_TOL: f64 = 1e-9;
    const POINT_TOL: f64 = 1e-12;
}

impl Scalar for f32 {
    const NORMALIZE_TOL: f64 = 1e-5;
    const POINT_TOL: f64 = 1e-6;
}

/// Ordered field the dense simplex pivots over.
///
/// Floating types compare against a small tolerance; exact types compare
/// against zero.
pub trait LpField: Clone + Debug + PartialOrd + Zero + One + Signed {
    fn from_f64(x: f64) -> Self;
    fn to_f64(&self) -> f64;
    /// `self > 0` up to the field's tolerance.
    fn is_pos(&self) -> bool;
    /// `self < 0` up to the field's tolerance.
    fn is_neg(&self) -> bool;
    fn is_zeroish(&self) -> bool {
        !self.is_pos() && !self.is_neg()
    }
}

macro_rules! float_field {
    ($t:ty, $eps:expr) => {
        impl LpField for $t {
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            fn to_f64(&self) -> f64 {
                *self as f64
            }
            fn is_pos(&self) -> bool {
                *self > $eps
            }
            fn is_neg(&self) -> bool {
                *self < -$eps
            }
        }
    };
}

float_field!(f64, 1e-11);
float_field!(f32, 1e-5);

impl LpField for BigRational {
    /// Exact conversion: every finite double is a dyadic rational.
    fn from_f64(x: f64) -> Self {
        BigRational::from_float(x).unwrap_or_else(|| BigRational::from_integer(BigInt::zero()))
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn is_pos(&self) -> bool {
        Signed::is_positive(self)
    }
    fn is_neg(&self) -> bool {
        Signed::is_negative(self)
    }
}
