use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taylor::{Jet, Scalar, MAX_ORDER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    Circle,
    Lemniscate,
    Hover,
}

impl ReferenceKind {
    pub fn name(self) -> &'static str {
        match self {
            ReferenceKind::Circle => "circle",
            ReferenceKind::Lemniscate => "lemniscate",
            ReferenceKind::Hover => "hover",
        }
    }
}

impl std::str::FromStr for ReferenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circle" => Ok(ReferenceKind::Circle),
            "lemniscate" => Ok(ReferenceKind::Lemniscate),
            "hover" => Ok(ReferenceKind::Hover),
            other => Err(Error::Domain(format!("unknown reference {other:?}"))),
        }
    }
}

/// Planar position reference with analytic time jets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub kind: ReferenceKind,
    /// Lemniscate half-widths; the circle has unit radius.
    pub a: f64,
    pub b: f64,
    /// Period in seconds.
    pub period: f64,
    /// Hover position.
    pub anchor: [f64; 2],
}

impl Reference {
    pub fn circle() -> Self {
        Reference {
            kind: ReferenceKind::Circle,
            a: 1.0,
            b: 0.6,
            period: 14.0,
            anchor: [0.0, 0.0],
        }
    }

    pub fn lemniscate() -> Self {
        Reference {
            kind: ReferenceKind::Lemniscate,
            ..Self::circle()
        }
    }

    pub fn hover(p: [f64; 2]) -> Self {
        Reference {
            kind: ReferenceKind::Hover,
            anchor: p,
            ..Self::circle()
        }
    }

    pub fn of_kind(kind: ReferenceKind) -> Self {
        match kind {
            ReferenceKind::Circle => Self::circle(),
            ReferenceKind::Lemniscate => Self::lemniscate(),
            ReferenceKind::Hover => Self::hover([0.0, 0.0]),
        }
    }

    pub fn omega(&self) -> f64 {
        2.0 * PI / self.period
    }

    /// Position as a generic scalar function of time.
    pub fn position<T: Scalar>(&self, t: T) -> [T; 2] {
        let phase = t * self.omega();
        match self.kind {
            ReferenceKind::Circle => [phase.cos(), phase.sin()],
            ReferenceKind::Lemniscate => {
                let (s, c) = (phase.sin(), phase.cos());
                let denom = s * s + 1.0;
                [c * self.a / denom, s * c * self.b / denom]
            }
            ReferenceKind::Hover => [
                T::constant(self.anchor[0]) + t * 0.0,
                T::constant(self.anchor[1]) + t * 0.0,
            ],
        }
    }

    pub fn position_at(&self, t: f64) -> [f64; 2] {
        self.position(t)
    }

    /// Per-channel jets of the position at `t`.
    pub fn jets(&self, t: f64, order: usize) -> Result<Vec<Jet>> {
        if order > MAX_ORDER {
            return Err(crate::taylor::JetError::OrderTooLarge(order).into());
        }
        Ok(self.position(Jet::variable(t, order)).to_vec())
    }

    /// Derivatives `[y, y', ..., y^(order)]` per channel.
    pub fn derivatives(&self, t: f64, order: usize) -> Result<Vec<Vec<f64>>> {
        Ok(self.jets(t, order)?.iter().map(Jet::derivatives).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_start_is_analytic() {
        let r = Reference::circle();
        let w = 2.0 * PI / 14.0;
        let d = r.derivatives(0.0, 4).unwrap();
        assert!((d[0][0] - 1.0).abs() < 1e-15 && d[1][0].abs() < 1e-15);
        assert!(d[0][1].abs() < 1e-15 && (d[1][1] - w).abs() < 1e-15);
        assert!((d[0][2] + w * w).abs() < 1e-15 && d[1][2].abs() < 1e-15);
        assert!((d[1][3] + w.powi(3)).abs() < 1e-15);
        assert!((d[0][4] - w.powi(4)).abs() < 1e-15);
    }

    /// Central difference of order `k` (1..=4) with two Richardson steps.
    fn central(f: &dyn Fn(f64) -> f64, t: f64, k: usize, h: f64) -> f64 {
        let raw = |h: f64| match k {
            1 => (f(t + h) - f(t - h)) / (2.0 * h),
            2 => (f(t + h) - 2.0 * f(t) + f(t - h)) / (h * h),
            3 => (f(t + 2.0 * h) - 2.0 * f(t + h) + 2.0 * f(t - h) - f(t - 2.0 * h)) / (2.0 * h.powi(3)),
            _ => {
                (f(t + 2.0 * h) - 4.0 * f(t + h) + 6.0 * f(t) - 4.0 * f(t - h) + f(t - 2.0 * h))
                    / h.powi(4)
            }
        };
        let first = |h: f64| (4.0 * raw(h / 2.0) - raw(h)) / 3.0;
        (16.0 * first(h / 2.0) - first(h)) / 15.0
    }

    #[test]
    fn jets_match_central_differences() {
        for r in [Reference::circle(), Reference::lemniscate()] {
            for &t in &[0.0, 1.3, 4.7, 9.9, 13.2] {
                let d = r.derivatives(t, 4).unwrap();
                for c in 0..2 {
                    let f = move |s: f64| r.position_at(s)[c];
                    for k in 1..=4 {
                        let fd = central(&f, t, k, 0.1);
                        let scale = d[c][k].abs().max(r.omega().powi(k as i32));
                        assert!(
                            (d[c][k] - fd).abs() / scale < 1e-6,
                            "{:?} t={t} channel {c} order {k}: {} vs {fd}",
                            r.kind,
                            d[c][k]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn hover_is_constant() {
        let d = Reference::hover([0.3, -0.2]).derivatives(5.0, 4).unwrap();
        assert_eq!(d[0], vec![0.3, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(d[1], vec![-0.2, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn lemniscate_start() {
        let p = Reference::lemniscate().position_at(0.0);
        assert_eq!(p, [1.0, 0.0]);
    }
}
