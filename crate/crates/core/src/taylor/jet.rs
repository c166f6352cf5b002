use std::f64::consts::PI;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::{JetError, Scalar};

/// Highest Taylor order a [`Jet`] can carry.
pub const MAX_ORDER: usize = 5;

const N: usize = MAX_ORDER + 1;

/// Truncated Taylor expansion of a scalar signal around the current time.
///
/// Coefficients are stored scaled, `c[k] = z^(k)(t) / k!`. Binary operations
/// between jets of different order truncate to the smaller order; constants
/// carry [`MAX_ORDER`] so they never truncate anything.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    order: usize,
    c: [f64; N],
}

/// Primitive operations accepted by [`apply`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Sin,
    Cos,
    Exp,
    Erf,
    Sqrt,
    Atan2,
}

impl Primitive {
    fn arity(self) -> usize {
        match self {
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Div | Primitive::Atan2 => {
                2
            }
            _ => 1,
        }
    }
}

/// Applies a primitive to jets of equal order, reporting domain errors.
pub fn apply(op: Primitive, args: &[Jet]) -> Result<Jet, JetError> {
    if args.len() != op.arity() {
        return Err(JetError::Arity {
            op,
            expected: op.arity(),
            got: args.len(),
        });
    }
    if let [a, b] = args {
        if a.order != b.order {
            return Err(JetError::OrderMismatch(a.order, b.order));
        }
    }
    let a = args[0];
    let out = match op {
        Primitive::Add => a + args[1],
        Primitive::Sub => a - args[1],
        Primitive::Mul => a * args[1],
        Primitive::Div => a.try_div(args[1])?,
        Primitive::Neg => -a,
        Primitive::Sin => a.sin(),
        Primitive::Cos => a.cos(),
        Primitive::Exp => a.exp(),
        Primitive::Erf => a.erf(),
        Primitive::Sqrt => a.try_sqrt()?,
        Primitive::Atan2 => a.try_atan2(args[1])?,
    };
    out.check_finite()?;
    Ok(out)
}

impl Jet {
    /// Builds a jet from scaled Taylor coefficients; the order is `len - 1`.
    pub fn from_coeffs(coeffs: &[f64]) -> Result<Self, JetError> {
        if coeffs.is_empty() || coeffs.len() > N {
            return Err(JetError::OrderTooLarge(coeffs.len().saturating_sub(1)));
        }
        let mut c = [0.0; N];
        c[..coeffs.len()].copy_from_slice(coeffs);
        let jet = Jet {
            order: coeffs.len() - 1,
            c,
        };
        jet.check_finite()?;
        Ok(jet)
    }

    /// Lifts a signal value and its raw time derivatives
    /// `[z', z'', ...]` into a jet of order `derivatives.len()`.
    pub fn lift(value: f64, derivatives: &[f64]) -> Result<Self, JetError> {
        let order = derivatives.len();
        if order > MAX_ORDER {
            return Err(JetError::OrderTooLarge(order));
        }
        let mut c = [0.0; N];
        c[0] = value;
        let mut factorial = 1.0;
        for (k, d) in derivatives.iter().enumerate() {
            factorial *= (k + 1) as f64;
            c[k + 1] = d / factorial;
        }
        let jet = Jet { order, c };
        jet.check_finite()?;
        Ok(jet)
    }

    /// The identity signal `z(s) = s` expanded at `s = t`.
    pub fn variable(t: f64, order: usize) -> Self {
        assert!(order <= MAX_ORDER, "jet order {order} > {MAX_ORDER}");
        let mut c = [0.0; N];
        c[0] = t;
        if order >= 1 {
            c[1] = 1.0;
        }
        Jet { order, c }
    }

    /// A constant signal known to the given order.
    pub fn constant_of_order(value: f64, order: usize) -> Self {
        assert!(order <= MAX_ORDER, "jet order {order} > {MAX_ORDER}");
        let mut c = [0.0; N];
        c[0] = value;
        Jet { order, c }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.c[..=self.order]
    }

    /// Scaled coefficient `z^(k)/k!`; zero above the order.
    pub fn coeff(&self, k: usize) -> f64 {
        if k <= self.order {
            self.c[k]
        } else {
            0.0
        }
    }

    /// Raw time derivative `z^(k)`.
    pub fn derivative(&self, k: usize) -> f64 {
        let factorial: f64 = (1..=k).map(|i| i as f64).product();
        self.coeff(k) * factorial
    }

    /// Raw derivatives `[z, z', ..., z^(order)]`.
    pub fn derivatives(&self) -> Vec<f64> {
        (0..=self.order).map(|k| self.derivative(k)).collect()
    }

    /// Jet of the time derivative, one order lower.
    pub fn differentiate(&self) -> Result<Self, JetError> {
        if self.order == 0 {
            return Err(JetError::OrderExhausted);
        }
        let mut c = [0.0; N];
        for k in 0..self.order {
            c[k] = (k + 1) as f64 * self.c[k + 1];
        }
        Ok(Jet {
            order: self.order - 1,
            c,
        })
    }

    /// Drops coefficients above `order`.
    pub fn truncate(&self, order: usize) -> Self {
        let order = order.min(self.order);
        let mut c = [0.0; N];
        c[..=order].copy_from_slice(&self.c[..=order]);
        Jet { order, c }
    }

    /// Replaces the coefficient `k`, raising the order if needed.
    pub fn with_coeff(mut self, k: usize, value: f64) -> Self {
        assert!(k <= MAX_ORDER, "jet order {k} > {MAX_ORDER}");
        self.c[k] = value;
        self.order = self.order.max(k);
        self
    }

    /// Evaluates the truncated series at offset `dt`.
    pub fn eval_at(&self, dt: f64) -> f64 {
        self.coeffs().iter().rev().fold(0.0, |acc, c| acc * dt + c)
    }

    fn check_finite(&self) -> Result<(), JetError> {
        if self.coeffs().iter().all(|c| c.is_finite()) {
            Ok(())
        } else {
            Err(JetError::NonFinite)
        }
    }

    fn zeros(order: usize) -> Self {
        Jet { order, c: [0.0; N] }
    }

    /// `z' = a' * g` integrated coefficient-wise, given `z(0)`.
    fn integrate_chain(z0: f64, a: &Jet, g: &Jet) -> Self {
        let order = a.order.min(g.order);
        let mut out = Jet::zeros(order);
        out.c[0] = z0;
        for k in 1..=order {
            let mut s = 0.0;
            for j in 1..=k {
                s += j as f64 * a.c[j] * g.c[k - j];
            }
            out.c[k] = s / k as f64;
        }
        out
    }
}

impl Add for Jet {
    type Output = Jet;

    fn add(self, rhs: Jet) -> Jet {
        let mut out = Jet::zeros(self.order.min(rhs.order));
        for k in 0..=out.order {
            out.c[k] = self.c[k] + rhs.c[k];
        }
        out
    }
}

impl Sub for Jet {
    type Output = Jet;

    fn sub(self, rhs: Jet) -> Jet {
        let mut out = Jet::zeros(self.order.min(rhs.order));
        for k in 0..=out.order {
            out.c[k] = self.c[k] - rhs.c[k];
        }
        out
    }
}

impl Mul for Jet {
    type Output = Jet;

    fn mul(self, rhs: Jet) -> Jet {
        let mut out = Jet::zeros(self.order.min(rhs.order));
        for k in 0..=out.order {
            let mut s = self.c[0] * rhs.c[k];
            for j in 1..=k {
                s += self.c[j] * rhs.c[k - j];
            }
            out.c[k] = s;
        }
        out
    }
}

impl Div for Jet {
    type Output = Jet;

    fn div(self, rhs: Jet) -> Jet {
        let mut out = Jet::zeros(self.order.min(rhs.order));
        out.c[0] = self.c[0] / rhs.c[0];
        for k in 1..=out.order {
            let mut s = self.c[k];
            for j in 1..=k {
                s -= rhs.c[j] * out.c[k - j];
            }
            out.c[k] = s / rhs.c[0];
        }
        out
    }
}

impl Neg for Jet {
    type Output = Jet;

    fn neg(mut self) -> Jet {
        for c in &mut self.c[..=self.order] {
            *c = -*c;
        }
        self
    }
}

impl Add<f64> for Jet {
    type Output = Jet;

    fn add(mut self, rhs: f64) -> Jet {
        self.c[0] += rhs;
        self
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;

    fn sub(mut self, rhs: f64) -> Jet {
        self.c[0] -= rhs;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;

    fn mul(mut self, rhs: f64) -> Jet {
        for c in &mut self.c[..=self.order] {
            *c *= rhs;
        }
        self
    }
}

impl Div<f64> for Jet {
    type Output = Jet;

    fn div(mut self, rhs: f64) -> Jet {
        for c in &mut self.c[..=self.order] {
            *c /= rhs;
        }
        self
    }
}

impl Jet {
    fn sin_cos(self) -> (Jet, Jet) {
        let mut s = Jet::zeros(self.order);
        let mut c = Jet::zeros(self.order);
        s.c[0] = self.c[0].sin();
        c.c[0] = self.c[0].cos();
        for k in 1..=self.order {
            let (mut ss, mut cc) = (0.0, 0.0);
            for j in 1..=k {
                let ja = j as f64 * self.c[j];
                ss += ja * c.c[k - j];
                cc += ja * s.c[k - j];
            }
            s.c[k] = ss / k as f64;
            c.c[k] = -cc / k as f64;
        }
        (s, c)
    }
}

impl Scalar for Jet {
    fn constant(value: f64) -> Self {
        Jet::constant_of_order(value, MAX_ORDER)
    }

    fn value(&self) -> f64 {
        self.c[0]
    }

    fn sin(self) -> Self {
        self.sin_cos().0
    }

    fn cos(self) -> Self {
        self.sin_cos().1
    }

    fn exp(self) -> Self {
        let mut e = Jet::zeros(self.order);
        e.c[0] = self.c[0].exp();
        for k in 1..=self.order {
            let mut s = 0.0;
            for j in 1..=k {
                s += j as f64 * self.c[j] * e.c[k - j];
            }
            e.c[k] = s / k as f64;
        }
        e
    }

    fn erf(self) -> Self {
        // d/dt erf(a) = a' (2/sqrt(pi)) exp(-a^2)
        let g = (-(self * self)).exp() * (2.0 / PI.sqrt());
        Jet::integrate_chain(libm::erf(self.c[0]), &self, &g)
    }

    fn sqrt(self) -> Self {
        let mut s = Jet::zeros(self.order);
        s.c[0] = self.c[0].sqrt();
        for k in 1..=self.order {
            let mut acc = self.c[k];
            for j in 1..k {
                acc -= s.c[j] * s.c[k - j];
            }
            s.c[k] = acc / (2.0 * s.c[0]);
        }
        s
    }

    fn atan2(self, x: Self) -> Self {
        // d/dt atan2(y, x) = (y' x - y x') / (x^2 + y^2)
        let r = x * x + self * self;
        let p = x / r;
        let q = self / r;
        let order = self.order.min(x.order);
        let mut out = Jet::zeros(order);
        out.c[0] = self.c[0].atan2(x.c[0]);
        for k in 1..=order {
            let mut s = 0.0;
            for j in 1..=k {
                s += j as f64 * (self.c[j] * p.c[k - j] - x.c[j] * q.c[k - j]);
            }
            out.c[k] = s / k as f64;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lift_scales_by_factorial() {
        let j = Jet::lift(9.0, &[6.0, 2.0]).unwrap();
        assert_eq!(j.coeffs(), &[9.0, 6.0, 1.0]);
        let zero = Jet::lift(0.0, &[]).unwrap();
        assert_eq!(zero.order(), 0);
        assert_eq!(zero.coeffs(), &[0.0]);
    }

    #[test]
    fn lift_matches_composed_sine() {
        let lifted = Jet::lift(1f64.sin(), &[1f64.cos(), -1f64.sin()]).unwrap();
        let composed = Jet::variable(1.0, 2).sin();
        for k in 0..=2 {
            assert_relative_eq!(lifted.coeff(k), composed.coeff(k), epsilon = 1e-15);
        }
    }

    #[test]
    fn lift_rejects_non_finite() {
        assert_eq!(Jet::lift(f64::NAN, &[]), Err(JetError::NonFinite));
        assert_eq!(Jet::lift(1.0, &[f64::INFINITY]), Err(JetError::NonFinite));
    }

    #[test]
    fn square_of_affine_signal() {
        let a = Jet::from_coeffs(&[1.0, 1.0, 0.0]).unwrap();
        let p = apply(Primitive::Mul, &[a, a]).unwrap();
        assert_eq!(p.coeffs(), &[1.0, 2.0, 1.0]);
    }

    #[test]
    fn sqrt_of_constant() {
        let c = Jet::constant_of_order(4.0, 3);
        let s = apply(Primitive::Sqrt, &[c]).unwrap();
        assert_eq!(s.coeffs(), &[2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn domain_errors() {
        let neg = Jet::constant_of_order(-1.0, 2);
        assert!(matches!(apply(Primitive::Sqrt, &[neg]), Err(JetError::NegativeSqrt(_))));
        let zero = Jet::variable(0.0, 2);
        assert!(matches!(
            apply(Primitive::Atan2, &[zero, zero]),
            Err(JetError::Atan2Origin(..))
        ));
        let one = Jet::constant_of_order(1.0, 2);
        assert_eq!(apply(Primitive::Div, &[one, zero]), Err(JetError::DivisionByZero));
        assert!(matches!(
            apply(Primitive::Add, &[one, Jet::variable(0.0, 3)]),
            Err(JetError::OrderMismatch(2, 3))
        ));
        assert!(matches!(apply(Primitive::Sin, &[]), Err(JetError::Arity { .. })));
    }

    #[test]
    fn known_series() {
        let t = Jet::variable(0.0, 5);
        let e = t.exp();
        let expect = [1.0, 1.0, 0.5, 1.0 / 6.0, 1.0 / 24.0, 1.0 / 120.0];
        for k in 0..=5 {
            assert_relative_eq!(e.coeff(k), expect[k], epsilon = 1e-15);
        }
        let c = t.cos();
        assert_relative_eq!(c.coeff(2), -0.5, epsilon = 1e-15);
        assert_relative_eq!(c.coeff(4), 1.0 / 24.0, epsilon = 1e-15);
        // atan2(t, 1) = atan(t) = t - t^3/3 + t^5/5
        let a = t.atan2(Jet::constant(1.0));
        assert_relative_eq!(a.coeff(1), 1.0, epsilon = 1e-15);
        assert_relative_eq!(a.coeff(3), -1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(a.coeff(5), 0.2, epsilon = 1e-15);
        // erf(t) = 2/sqrt(pi) (t - t^3/3 + t^5/10)
        let f = t.erf();
        let k = 2.0 / PI.sqrt();
        assert_relative_eq!(f.coeff(1), k, epsilon = 1e-15);
        assert_relative_eq!(f.coeff(3), -k / 3.0, epsilon = 1e-15);
        assert_relative_eq!(f.coeff(5), k / 10.0, epsilon = 1e-15);
    }

    #[test]
    fn differentiate_shifts_coefficients() {
        // t^3 at t = 2: [8, 12, 6, 1]
        let t = Jet::variable(2.0, 3);
        let cube = t * t * t;
        assert_eq!(cube.coeffs(), &[8.0, 12.0, 6.0, 1.0]);
        let d = cube.differentiate().unwrap();
        assert_eq!(d.derivatives(), vec![12.0, 12.0, 6.0]);
        assert_eq!(Jet::constant_of_order(1.0, 0).differentiate(), Err(JetError::OrderExhausted));
    }

    #[test]
    fn mixed_orders_truncate() {
        let a = Jet::variable(1.0, 4);
        let b = Jet::variable(1.0, 2);
        assert_eq!((a * b).order(), 2);
        assert_eq!((a + Jet::constant(3.0)).order(), 4);
    }
}
