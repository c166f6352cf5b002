use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::observer::ChainObserver;
use super::reference::Reference;
use crate::error::{Error, Result};
use crate::flat_map::FlatnessDiffeomorphism;
use crate::pure_feedback::PureFeedbackModel;
use crate::taylor::Jet;

/// Feedback law evaluated at the control rate.
pub trait Controller {
    /// Called once with the initial measurement before the first step.
    fn reset(&mut self, t: f64, x: &[f64]) -> Result<()>;

    fn control(&mut self, t: f64, x: &[f64]) -> Result<Vec<f64>>;
}

pub const DEFAULT_GAINS: [f64; 4] = [3.96, 12.08, 13.16, 6.03];

/// Roots of `s^r + k_{r-1} s^{r-1} + ... + k_0`.
pub fn gain_polynomial_roots(gains: &[f64]) -> Vec<nalgebra::Complex<f64>> {
    let r = gains.len();
    let companion = DMatrix::from_fn(r, r, |i, j| {
        if i + 1 == j {
            1.0
        } else if i == r - 1 {
            -gains[j]
        } else {
            0.0
        }
    });
    companion.complex_eigenvalues().iter().copied().collect()
}

pub fn check_hurwitz(gains: &[f64]) -> Result<()> {
    if gains.is_empty() || gains.iter().any(|k| !(*k > 0.0)) {
        return Err(Error::Domain(format!("gains must be positive, got {gains:?}")));
    }
    let roots = gain_polynomial_roots(gains);
    if let Some(root) = roots.iter().find(|z| !(z.re < 0.0)) {
        return Err(Error::Domain(format!(
            "gain polynomial is not Hurwitz (root {root})"
        )));
    }
    Ok(())
}

/// `nu = y_r^(r) - sum_j k_j (y^(j) - y_r^(j))` for one channel.
pub fn virtual_input(gains: &[f64], y: &[f64], reference: &[f64]) -> f64 {
    let r = gains.len();
    let mut nu = reference[r];
    for j in 0..r {
        nu -= gains[j] * (y[j] - reference[j]);
    }
    nu
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeSource {
    /// Flat-output derivatives computed from the measured state through the
    /// augmented model.
    #[default]
    Algebraic,
    Observer,
}

/// Brunovsky-form tracking controller: linear feedback on the flat output
/// error, mapped to the plant input through the inverse flat map.
#[derive(Debug, Clone)]
pub struct FlatTrackingController<M> {
    diffeo: FlatnessDiffeomorphism<M>,
    reference: Reference,
    gains: Vec<f64>,
    source: DerivativeSource,
    observer: Option<ChainObserver>,
    last_nu: Option<Vec<f64>>,
}

impl<M: PureFeedbackModel> FlatTrackingController<M> {
    pub fn new(
        diffeo: FlatnessDiffeomorphism<M>,
        reference: Reference,
        gains: &[f64],
        source: DerivativeSource,
        control_dt: f64,
    ) -> Result<Self> {
        let r = diffeo.beta();
        if gains.len() != r {
            return Err(Error::Dimension {
                what: "controller gains",
                expected: r,
                got: gains.len(),
            });
        }
        check_hurwitz(gains)?;
        let observer = match source {
            DerivativeSource::Algebraic => None,
            DerivativeSource::Observer => Some(ChainObserver::with_default_poles(
                r,
                diffeo.flat_dim(),
                control_dt,
            )?),
        };
        Ok(FlatTrackingController {
            diffeo,
            reference,
            gains: gains.to_vec(),
            source,
            observer,
            last_nu: None,
        })
    }

    /// Replaces the observer (e.g. to change its poles).
    pub fn with_observer(mut self, observer: ChainObserver) -> Self {
        self.observer = Some(observer);
        self.source = DerivativeSource::Observer;
        self
    }

    pub fn diffeo(&self) -> &FlatnessDiffeomorphism<M> {
        &self.diffeo
    }

    pub fn reference(&self) -> &Reference {
        &self.reference
    }

    pub fn observer(&self) -> Option<&ChainObserver> {
        self.observer.as_ref()
    }

    pub fn observer_mut(&mut self) -> Option<&mut ChainObserver> {
        self.observer.as_mut()
    }

    /// Flat-output derivatives `[y, ..., y^(r-1)]` per channel implied by
    /// the measured state.
    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .diffeo
            .flat_derivatives_from_state(x)?
            .iter()
            .map(Jet::derivatives)
            .collect())
    }

    /// The control law for given flat-output derivatives.
    pub fn law(&self, t: f64, y: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        let r = self.gains.len();
        let reference = self.reference.derivatives(t, r)?;
        let mut nu = Vec::with_capacity(y.len());
        let mut jets = Vec::with_capacity(y.len());
        for (yc, rc) in y.iter().zip(&reference) {
            let v = virtual_input(&self.gains, yc, rc);
            let mut derivs = yc[1..r].to_vec();
            derivs.push(v);
            jets.push(Jet::lift(yc[0], &derivs)?);
            nu.push(v);
        }
        let u = self.diffeo.input_from_flat(&jets)?;
        Ok((u, nu))
    }

    fn step(&mut self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let m = self.diffeo.flat_dim();
        let y = match self.source {
            DerivativeSource::Algebraic => self.reconstruct(x)?,
            DerivativeSource::Observer => {
                let obs = self
                    .observer
                    .as_mut()
                    .expect("observer source always carries an observer");
                if let Some(nu) = &self.last_nu {
                    obs.predict(nu);
                }
                obs.correct(&x[..m]);
                obs.estimates()
            }
        };
        let (u, nu) = self.law(t, &y)?;
        self.last_nu = Some(nu);
        Ok(u)
    }
}

impl<M: PureFeedbackModel> Controller for FlatTrackingController<M> {
    fn reset(&mut self, _t: f64, x: &[f64]) -> Result<()> {
        self.last_nu = None;
        if self.observer.is_some() {
            let y = self.reconstruct(x)?;
            self.observer.as_mut().expect("checked above").reset(&y)?;
        }
        Ok(())
    }

    fn control(&mut self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.step(t, x).map_err(|e| Error::Controller {
            t,
            state: x.to_vec(),
            source: Box::new(e),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrotor::Quadrotor;

    #[test]
    fn default_gains_are_hurwitz() {
        let roots = gain_polynomial_roots(&DEFAULT_GAINS);
        assert_eq!(roots.len(), 4);
        assert!(roots.iter().all(|z| z.re < 0.0), "{roots:?}");
        assert!(check_hurwitz(&DEFAULT_GAINS).is_ok());
        assert!(check_hurwitz(&[1.0, 1.0, 1.0, 10.0]).is_err());
        assert!(check_hurwitz(&[1.0, -1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn virtual_input_without_error_is_feedforward() {
        let r = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(virtual_input(&DEFAULT_GAINS, &r[..4], &r), 5.0);
        let y = [1.1, 2.0, 3.0, 4.0];
        assert!((virtual_input(&DEFAULT_GAINS, &y, &r) - (5.0 - 0.396)).abs() < 1e-12);
    }

    #[test]
    fn hover_reference_at_hover_gives_zero_input() {
        let q = Quadrotor::default();
        let diffeo = FlatnessDiffeomorphism::nominal(q);
        for source in [DerivativeSource::Algebraic, DerivativeSource::Observer] {
            let mut ctrl =
                FlatTrackingController::new(diffeo.clone(), Reference::hover([0.5, 1.0]), &DEFAULT_GAINS, source, 0.01)
                    .unwrap();
            let (x, _) = q.hover([0.5, 1.0]);
            ctrl.reset(0.0, &x).unwrap();
            for k in 0..3 {
                let u = ctrl.control(k as f64 * 0.01, &x).unwrap();
                assert!(u.iter().all(|v| v.abs() < 1e-12), "{u:?}");
            }
        }
    }

    #[test]
    fn domain_violation_reports_state() {
        let q = Quadrotor::default();
        let diffeo = FlatnessDiffeomorphism::nominal(q);
        let mut ctrl = FlatTrackingController::new(
            diffeo,
            Reference::circle(),
            &DEFAULT_GAINS,
            DerivativeSource::Algebraic,
            0.01,
        )
        .unwrap();
        let mut x = q.hover([0.0, 0.0]).0;
        x[4] = -1.0;
        match ctrl.control(0.5, &x) {
            Err(Error::Controller { t, state, .. }) => {
                assert_eq!(t, 0.5);
                assert_eq!(state, x);
            }
            other => panic!("expected controller error, got {other:?}"),
        }
    }
}
