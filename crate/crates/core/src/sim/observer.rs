use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Discrete Luenberger observer for `m` independent integrator chains of
/// length `r`, driven by the virtual input and measuring the chain head.
///
/// Each sample runs a predict step with the exact zero-order-hold
/// discretization of the chain and a correct step
/// `z <- z + L (y - z_0)`. The gain places the eigenvalues of the error map
/// `(I - L C) A` at `exp(p dt)` for the requested continuous poles `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainObserver {
    r: usize,
    m: usize,
    dt: f64,
    a: DMatrix<f64>,
    b: DVector<f64>,
    gain: DVector<f64>,
    estimates: Vec<DVector<f64>>,
}

pub const DEFAULT_OBSERVER_POLE: f64 = -40.0;

fn factorial(n: usize) -> f64 {
    (1..=n).product::<usize>() as f64
}

impl ChainObserver {
    pub fn new(r: usize, m: usize, dt: f64, poles: &[f64]) -> Result<Self> {
        if poles.len() != r {
            return Err(Error::Dimension {
                what: "observer poles",
                expected: r,
                got: poles.len(),
            });
        }
        if let Some(p) = poles.iter().find(|p| !(**p < 0.0)) {
            return Err(Error::Domain(format!("observer pole {p} is not stable")));
        }
        if !(dt > 0.0) {
            return Err(Error::TimeGrid(format!("observer step must be positive, got {dt}")));
        }
        let a = DMatrix::from_fn(r, r, |i, j| {
            if j >= i {
                dt.powi((j - i) as i32) / factorial(j - i)
            } else {
                0.0
            }
        });
        let b = DVector::from_fn(r, |i, _| dt.powi((r - i) as i32) / factorial(r - i));

        // Ackermann on the pair (A, C A) with C = e_0^T.
        let c = DMatrix::from_fn(1, r, |_, j| if j == 0 { 1.0 } else { 0.0 });
        let mut obs = DMatrix::<f64>::zeros(r, r);
        let mut power = a.clone();
        for i in 0..r {
            obs.set_row(i, &(&c * &power).row(0));
            power = &power * &a;
        }
        let mut char_poly = DMatrix::<f64>::identity(r, r);
        for p in poles {
            char_poly = &char_poly * (&a - DMatrix::<f64>::identity(r, r) * (p * dt).exp());
        }
        let mut last = DVector::<f64>::zeros(r);
        last[r - 1] = 1.0;
        let inv = obs
            .try_inverse()
            .ok_or_else(|| Error::LinearSolve("chain observability matrix is singular".into()))?;
        let gain = char_poly * inv * last;
        Ok(ChainObserver {
            r,
            m,
            dt,
            a,
            b,
            gain,
            estimates: vec![DVector::zeros(r); m],
        })
    }

    pub fn with_default_poles(r: usize, m: usize, dt: f64) -> Result<Self> {
        Self::new(r, m, dt, &vec![DEFAULT_OBSERVER_POLE; r])
    }

    pub fn step(&self) -> f64 {
        self.dt
    }

    pub fn gain(&self) -> &DVector<f64> {
        &self.gain
    }

    /// Error propagation matrix of one predict/correct cycle.
    pub fn error_map(&self) -> DMatrix<f64> {
        let mut lca = DMatrix::zeros(self.r, self.r);
        for j in 0..self.r {
            for i in 0..self.r {
                lca[(i, j)] = self.gain[i] * self.a[(0, j)];
            }
        }
        &self.a - lca
    }

    /// Sets the per-channel estimates `[y, y', ..., y^(r-1)]`.
    pub fn reset(&mut self, estimates: &[Vec<f64>]) -> Result<()> {
        if estimates.len() != self.m || estimates.iter().any(|e| e.len() != self.r) {
            return Err(Error::Dimension {
                what: "observer estimates",
                expected: self.m * self.r,
                got: estimates.iter().map(Vec::len).sum(),
            });
        }
        self.estimates = estimates.iter().map(|e| DVector::from_column_slice(e)).collect();
        Ok(())
    }

    pub fn predict(&mut self, nu: &[f64]) {
        for (z, v) in self.estimates.iter_mut().zip(nu) {
            *z = &self.a * &*z + &self.b * *v;
        }
    }

    pub fn correct(&mut self, y: &[f64]) {
        for (z, yi) in self.estimates.iter_mut().zip(y) {
            let innovation = yi - z[0];
            *z += &self.gain * innovation;
        }
    }

    pub fn estimates(&self) -> Vec<Vec<f64>> {
        self.estimates.iter().map(|z| z.as_slice().to_vec()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_map_has_requested_poles() {
        let obs = ChainObserver::with_default_poles(4, 2, 0.01).unwrap();
        let target = (-0.4f64).exp();
        // a fourfold eigenvalue is numerically ill-conditioned; compare the
        // characteristic polynomial instead
        let e = obs.error_map();
        let id = DMatrix::<f64>::identity(4, 4);
        let shifted = &e - &id * target;
        let p = &shifted * &shifted * &shifted * &shifted;
        assert!(p.amax() < 1e-9, "{p}");
    }

    #[test]
    fn continuous_limit_of_gain() {
        // for small dt the gain approaches (l0 dt, l1 dt, ...) of the
        // continuous design (s + 40)^4
        let dt = 1e-5;
        let obs = ChainObserver::with_default_poles(4, 1, dt).unwrap();
        let cont = [160.0, 9600.0, 256000.0, 2560000.0];
        for i in 0..4 {
            let rel = obs.gain()[i] / (cont[i] * dt) - 1.0;
            assert!(rel.abs() < 1e-2, "gain {i}: {}", obs.gain()[i]);
        }
    }

    #[test]
    fn tracks_a_polynomial_exactly() {
        // y = t^4 / 24 has constant fourth derivative 1
        let dt = 0.01;
        let mut obs = ChainObserver::with_default_poles(4, 1, dt).unwrap();
        obs.reset(&[vec![0.0; 4]]).unwrap();
        let mut t = 0.0;
        for _ in 0..200 {
            obs.predict(&[1.0]);
            t += dt;
            obs.correct(&[t.powi(4) / 24.0]);
        }
        let est = obs.estimates();
        let exact = [t.powi(4) / 24.0, t.powi(3) / 6.0, t * t / 2.0, t];
        for i in 0..4 {
            assert!((est[0][i] - exact[i]).abs() < 1e-9, "{i}: {} vs {}", est[0][i], exact[i]);
        }
    }

    #[test]
    fn rejects_unstable_poles() {
        assert!(ChainObserver::new(2, 1, 0.01, &[-1.0, 0.5]).is_err());
        assert!(ChainObserver::new(2, 1, 0.01, &[-1.0]).is_err());
    }
}
