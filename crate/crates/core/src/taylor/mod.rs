//! Forward-mode differentiation over a common smooth-scalar abstraction.
//!
//! Every model map in this crate (nominal blocks, inverse maps, residual
//! networks) is written once against [`Scalar`] and can then be evaluated on
//! plain `f64`, on [`Jet`]s (truncated Taylor series in time) or on [`Dual`]s
//! (first-order directional derivatives, used for Jacobians).

mod dual;
mod jet;

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

pub use dual::{jacobian, Dual, DualVector, MAX_DUAL_DIRS};
pub use jet::{apply, Jet, Primitive, MAX_ORDER};

/// `atan2` is rejected when `a^2 + b^2` falls below this value.
pub const ATAN2_MIN_NORM_SQ: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JetError {
    #[error("non-finite value in Taylor coefficients")]
    NonFinite,
    #[error("jet order {0} exceeds the maximum order {MAX_ORDER}")]
    OrderTooLarge(usize),
    #[error("cannot differentiate an order-0 jet")]
    OrderExhausted,
    #[error("jet orders differ: {0} vs {1}")]
    OrderMismatch(usize, usize),
    #[error("primitive {op:?} expects {expected} argument(s), got {got}")]
    Arity {
        op: Primitive,
        expected: usize,
        got: usize,
    },
    #[error("sqrt of negative value {0}")]
    NegativeSqrt(f64),
    #[error("atan2 evaluated at the origin ({0}, {1})")]
    Atan2Origin(f64, f64),
    #[error("division by zero value slot")]
    DivisionByZero,
    #[error("{0} directions exceed the dual capacity {MAX_DUAL_DIRS}")]
    TooManyDirections(usize),
}

/// A smooth scalar: plain reals, Taylor jets and dual numbers.
///
/// The unchecked operations follow IEEE semantics (producing `NaN`/`inf` on
/// domain errors); the `try_*` variants report domain violations instead.
pub trait Scalar:
    Copy
    + Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn constant(value: f64) -> Self;

    /// The value slot (zeroth coefficient / primal part).
    fn value(&self) -> f64;

    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn erf(self) -> Self;
    fn sqrt(self) -> Self;

    /// Four-quadrant arctangent of `self / x`.
    fn atan2(self, x: Self) -> Self;

    fn square(self) -> Self {
        self * self
    }

    fn try_sqrt(self) -> Result<Self, JetError> {
        let v = self.value();
        if v < 0.0 {
            return Err(JetError::NegativeSqrt(v));
        }
        Ok(self.sqrt())
    }

    fn try_atan2(self, x: Self) -> Result<Self, JetError> {
        let (a, b) = (self.value(), x.value());
        if a * a + b * b < ATAN2_MIN_NORM_SQ {
            return Err(JetError::Atan2Origin(a, b));
        }
        Ok(self.atan2(x))
    }

    fn try_div(self, rhs: Self) -> Result<Self, JetError> {
        if rhs.value() == 0.0 {
            return Err(JetError::DivisionByZero);
        }
        Ok(self / rhs)
    }

    /// Exact GeLU, `0.5 x (1 + erf(x / sqrt 2))`.
    fn gelu(self) -> Self {
        (self * FRAC_1_SQRT_2).erf() * self * 0.5 + self * 0.5
    }
}

impl Scalar for f64 {
    fn constant(value: f64) -> Self {
        value
    }

    fn value(&self) -> f64 {
        *self
    }

    fn sin(self) -> Self {
        f64::sin(self)
    }

    fn cos(self) -> Self {
        f64::cos(self)
    }

    fn exp(self) -> Self {
        f64::exp(self)
    }

    fn erf(self) -> Self {
        libm::erf(self)
    }

    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }

    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
}

/// Converts a slice of reals into constants of any scalar type.
pub fn constants<T: Scalar>(values: &[f64]) -> Vec<T> {
    values.iter().map(|&v| T::constant(v)).collect()
}

/// Value slots of a scalar slice.
pub fn values<T: Scalar>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(Scalar::value).collect()
}
