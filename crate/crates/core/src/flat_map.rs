//! Flatness diffeomorphism of a pure-feedback model augmented with a
//! lower-triangular residual.
//!
//! With flat output `y = x_1`, sub-states are recovered recursively:
//!
//! ```text
//! x_1     = y
//! x_{k+1} = h_k(x_1, ..., x_k, d/dt x_k - D_k(x_1, ..., x_k))
//! ```
//!
//! and the input is the `r + 1`-th level. The whole recursion runs in jet
//! arithmetic, so `d/dt x_k` is simply the shifted jet of the previous level
//! and no Jacobian is formed explicitly.

use std::sync::Arc;

use crate::dynamics::Dynamics;
use crate::error::{check_dim, Error, Result};
use crate::pure_feedback::{nominal_rhs, PureFeedbackModel};
use crate::residual::LowerTriangularResidual;
use crate::taylor::{Jet, Scalar};

/// Nominal model plus residual, `f(x, u) + D(x)`.
#[derive(Debug, Clone)]
pub struct AugmentedModel<M> {
    pub model: M,
    pub residual: Arc<LowerTriangularResidual>,
}

impl<M: PureFeedbackModel> AugmentedModel<M> {
    pub fn new(model: M, residual: Arc<LowerTriangularResidual>) -> Result<Self> {
        residual.check_structure(model.relative_degree(), model.width())?;
        Ok(AugmentedModel { model, residual })
    }

    /// Augmented block `i`: nominal block plus residual block.
    fn block<T: Scalar>(&self, i: usize, xs: &[T]) -> Vec<T> {
        let mut out = self.model.block(i, xs);
        if let Some(d) = self.residual.block_output(i, xs) {
            for (o, di) in out.iter_mut().zip(d) {
                *o = *o + di;
            }
        }
        out
    }
}

impl<M: PureFeedbackModel> Dynamics for AugmentedModel<M> {
    fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.model.width()
    }

    fn rhs<T: Scalar>(&self, x: &[T], u: &[T]) -> Vec<T> {
        let mut dx = nominal_rhs(&self.model, x, u);
        if !self.residual.is_zero() {
            let d = self.residual.eval(x);
            for (o, di) in dx.iter_mut().zip(d) {
                *o = *o + di;
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub struct FlatnessDiffeomorphism<M> {
    augmented: AugmentedModel<M>,
}

impl<M: PureFeedbackModel> FlatnessDiffeomorphism<M> {
    /// Structural construction; no numerical work happens here.
    pub fn construct(model: M, residual: Arc<LowerTriangularResidual>) -> Result<Self> {
        Ok(FlatnessDiffeomorphism {
            augmented: AugmentedModel::new(model, residual)?,
        })
    }

    pub fn nominal(model: M) -> Self {
        let residual = LowerTriangularResidual::zero(model.relative_degree(), model.width());
        Self::construct(model, Arc::new(residual)).expect("zero residual matches by construction")
    }

    pub fn model(&self) -> &M {
        &self.augmented.model
    }

    pub fn residual(&self) -> &Arc<LowerTriangularResidual> {
        &self.augmented.residual
    }

    pub fn augmented(&self) -> &AugmentedModel<M> {
        &self.augmented
    }

    /// Flat output dimension `m`.
    pub fn flat_dim(&self) -> usize {
        self.model().width()
    }

    /// Highest flat-output derivative needed to recover the input (`r`).
    pub fn beta(&self) -> usize {
        self.model().relative_degree()
    }

    /// Number of input derivatives the flat output depends on (`y = x_1`).
    pub fn alpha(&self) -> usize {
        0
    }

    /// Runs the recursion for `levels` sub-states. Level `k` (zero-based)
    /// comes back as `m` jets of order `K - k`.
    pub fn levels(&self, y: &[Jet], levels: usize) -> Result<Vec<Vec<Jet>>> {
        let m = self.flat_dim();
        check_dim("flat output", m, y.len())?;
        let order = y.iter().map(Jet::order).min().unwrap_or(0);
        if order + 1 < levels {
            return Err(Error::Structure(format!(
                "{levels} levels need flat-output jets of order >= {}, got {order}",
                levels - 1
            )));
        }
        let model = self.model();
        let mut out: Vec<Vec<Jet>> = Vec::with_capacity(levels);
        out.push(y.iter().map(|j| j.truncate(order)).collect());
        for k in 1..levels {
            let target_order = order - k;
            let prev = &out[k - 1];
            let mut xdot = prev
                .iter()
                .map(Jet::differentiate)
                .collect::<Result<Vec<_>, _>>()?;
            let xs: Vec<Jet> = out
                .iter()
                .flat_map(|level| level.iter().map(|j| j.truncate(target_order)))
                .collect();
            if let Some(d) = self.residual().block_output(k - 1, &xs) {
                for (xd, di) in xdot.iter_mut().zip(d) {
                    *xd = *xd - di;
                }
            }
            let next = model
                .inverse(k - 1, &xs, &xdot)
                .map_err(|e| Error::FlatDomain {
                    level: k + 1,
                    reason: e.to_string(),
                })?;
            let values: Vec<f64> = next.iter().map(Jet::value).collect();
            if next.iter().any(|j| j.coeffs().iter().any(|c| !c.is_finite())) {
                return Err(Error::FlatDomain {
                    level: k + 1,
                    reason: format!("non-finite jet {values:?}"),
                });
            }
            model
                .sub_state_valid(k, &values)
                .map_err(|reason| Error::FlatDomain {
                    level: k + 1,
                    reason,
                })?;
            out.push(next);
        }
        Ok(out)
    }

    /// `x = Phi(y, ..., y^(r-1))`; jets must have order at least `r - 1`.
    pub fn state_from_flat(&self, y: &[Jet]) -> Result<Vec<f64>> {
        let r = self.model().relative_degree();
        let levels = self.levels(y, r)?;
        Ok(levels.iter().flatten().map(Jet::value).collect())
    }

    /// `u = Psi(y, ..., y^(r))`; jets must have order at least `r`.
    pub fn input_from_flat(&self, y: &[Jet]) -> Result<Vec<f64>> {
        Ok(self.state_and_input(y)?.1)
    }

    /// State and input from a single recursion pass.
    pub fn state_and_input(&self, y: &[Jet]) -> Result<(Vec<f64>, Vec<f64>)> {
        let r = self.model().relative_degree();
        let levels = self.levels(y, r + 1)?;
        let x = levels[..r].iter().flatten().map(Jet::value).collect();
        let u = levels[r].iter().map(Jet::value).collect();
        Ok((x, u))
    }

    /// Flat output and its derivatives up to order `r - 1` implied by the
    /// state under the augmented dynamics (all of these are independent of
    /// the input).
    pub fn flat_derivatives_from_state(&self, x: &[f64]) -> Result<Vec<Jet>> {
        let model = self.model();
        let (r, m) = (model.relative_degree(), model.width());
        check_dim("state", r * m, x.len())?;
        for k in 0..r {
            model
                .sub_state_valid(k, &x[k * m..(k + 1) * m])
                .map_err(Error::Domain)?;
        }
        let mut jets: Vec<Jet> = x.iter().map(|&v| Jet::constant_of_order(v, 0)).collect();
        for q in 0..r.saturating_sub(1) {
            // sub-state i is needed to order r - 1 - i
            for i in 0..r - 1 - q {
                let xs: Vec<Jet> = jets[..(i + 2) * m].iter().map(|j| j.truncate(q)).collect();
                let xdot = self.augmented.block(i, &xs);
                for (c, d) in xdot.iter().enumerate() {
                    let slot = &mut jets[i * m + c];
                    *slot = slot.with_coeff(q + 1, d.coeff(q) / (q + 1) as f64);
                }
            }
        }
        jets.truncate(m);
        Ok(jets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrotor::{Quadrotor, QuadrotorParams};

    fn constant_flat(p: [f64; 2], order: usize) -> Vec<Jet> {
        p.iter().map(|&v| Jet::constant_of_order(v, order)).collect()
    }

    #[test]
    fn hover_from_constant_output() {
        let q = Quadrotor::default();
        let diffeo = FlatnessDiffeomorphism::nominal(q);
        let (x, u) = diffeo.state_and_input(&constant_flat([0.5, -1.0], 4)).unwrap();
        assert_eq!(x, vec![0.5, -1.0, 0.0, 0.0, 9.81, 0.0, 0.0, 0.0]);
        assert_eq!(u, vec![0.0, 0.0]);

        let drag = LowerTriangularResidual::quadrotor_linear_drag(&QuadrotorParams::default());
        let diffeo = FlatnessDiffeomorphism::construct(q, Arc::new(drag)).unwrap();
        let x = diffeo.state_from_flat(&constant_flat([0.5, -1.0], 3)).unwrap();
        assert_eq!(x, vec![0.5, -1.0, 0.0, 0.0, 9.81, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn order_requirements() {
        let diffeo = FlatnessDiffeomorphism::nominal(Quadrotor::default());
        assert!(diffeo.state_from_flat(&constant_flat([0.0, 0.0], 2)).is_err());
        assert!(diffeo.input_from_flat(&constant_flat([0.0, 0.0], 3)).is_err());
        assert!(diffeo.state_from_flat(&constant_flat([0.0, 0.0], 3)).is_ok());
        assert_eq!((diffeo.alpha(), diffeo.beta(), diffeo.flat_dim()), (0, 4, 2));
    }

    #[test]
    fn free_fall_reference_violates_thrust() {
        let diffeo = FlatnessDiffeomorphism::nominal(Quadrotor::default());
        // y'' = (0, -g): zero thrust
        let y = vec![
            Jet::from_coeffs(&[0.0, 0.0, 0.0, 0.0, 0.0]).unwrap(),
            Jet::from_coeffs(&[0.0, 0.0, -9.81 / 2.0, 0.0, 0.0]).unwrap(),
        ];
        match diffeo.input_from_flat(&y) {
            Err(Error::FlatDomain { level, .. }) => assert_eq!(level, 3),
            other => panic!("expected a level-3 domain error, got {other:?}"),
        }
    }

    #[test]
    fn structural_mismatch() {
        let res = Arc::new(LowerTriangularResidual::zero(3, 2));
        assert!(matches!(
            FlatnessDiffeomorphism::construct(Quadrotor::default(), res),
            Err(Error::Structure(_))
        ));
    }

    #[test]
    fn hover_state_has_trivial_flat_derivatives() {
        let q = Quadrotor::default();
        let diffeo = FlatnessDiffeomorphism::nominal(q);
        let (x, _) = q.hover([0.2, 0.3]);
        let y = diffeo.flat_derivatives_from_state(&x).unwrap();
        assert_eq!(y[0].coeffs(), &[0.2, 0.0, 0.0, 0.0]);
        assert_eq!(y[1].coeffs(), &[0.3, 0.0, 0.0, 0.0]);
    }
}
