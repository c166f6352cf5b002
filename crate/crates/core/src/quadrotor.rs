//! Planar quadrotor: the original 6-state plant, the thrust-extended 8-state
//! pure-feedback model and the aerodynamic drag acting on it.
//!
//! Original coordinates: `[px, py, vx, vy, theta, omega]` with inputs
//! `[F, tau]`. Extended coordinates: `x1 = p`, `x2 = v`, `x3 = [F, theta]`,
//! `x4 = [F', omega]` with inputs `[F'', tau]`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::Dynamics;
use crate::pure_feedback::{nominal_rhs, PureFeedbackModel};
use crate::taylor::{JetError, Scalar};

pub const EXTENDED_DIM: usize = 8;
pub const ORIGINAL_DIM: usize = 6;
pub const INPUT_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadrotorParams {
    pub mass: f64,
    pub inertia: f64,
    pub gravity: f64,
    /// Parasitic (quadratic) drag coefficient `C_p`.
    pub parasitic_drag: f64,
    /// Isotropic linear drag coefficient `C_r`.
    pub linear_drag: f64,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        QuadrotorParams {
            mass: 1.0,
            inertia: 0.1,
            gravity: 9.81,
            parasitic_drag: 0.1,
            linear_drag: 0.01,
        }
    }
}

impl QuadrotorParams {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("mass", self.mass),
            ("inertia", self.inertia),
            ("gravity", self.gravity),
            ("parasitic_drag", self.parasitic_drag),
            ("linear_drag", self.linear_drag),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("quadrotor parameter {name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }

    pub fn without_drag(mut self) -> Self {
        self.parasitic_drag = 0.0;
        self.linear_drag = 0.0;
        self
    }
}

/// `-linear v - quadratic |v| v`.
pub fn drag<T: Scalar>(linear: f64, quadratic: f64, v: &[T]) -> Vec<T> {
    if quadratic == 0.0 {
        return v.iter().map(|&vi| -(vi * linear)).collect();
    }
    let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
    v.iter().map(|&vi| -(vi * linear) - speed * vi * quadratic).collect()
}

/// Ground-truth velocity residual of the plant.
pub fn true_disturbance(params: &QuadrotorParams, v: [f64; 2]) -> [f64; 2] {
    let d = drag(params.linear_drag, params.parasitic_drag, &v);
    [d[0], d[1]]
}

/// Nominal acceleration `(1/m) [-F sin(theta), F cos(theta) - m g]`.
fn thrust_acceleration<T: Scalar>(params: &QuadrotorParams, thrust: T, theta: T) -> [T; 2] {
    let inv_m = 1.0 / params.mass;
    [
        -(thrust * theta.sin()) * inv_m,
        (thrust * theta.cos() - params.mass * params.gravity) * inv_m,
    ]
}

/// The thrust-extended quadrotor in pure-feedback form (`r = 4`, `m = 2`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrotor {
    pub params: QuadrotorParams,
    /// Thrust values at or below this are outside the validity region.
    pub min_thrust: f64,
    /// Flips the sign of the attitude inverse map (fault injection).
    pub faulty_attitude_inverse: bool,
}

impl Quadrotor {
    pub const DEFAULT_MIN_THRUST: f64 = 0.1;

    pub fn new(params: QuadrotorParams) -> Self {
        Quadrotor {
            params,
            min_thrust: Self::DEFAULT_MIN_THRUST,
            faulty_attitude_inverse: false,
        }
    }

    pub fn with_fault_injection(mut self) -> Self {
        self.faulty_attitude_inverse = true;
        self
    }

    /// Hover equilibrium at position `p`: `(x, u)`.
    pub fn hover(&self, p: [f64; 2]) -> (Vec<f64>, Vec<f64>) {
        let x = vec![p[0], p[1], 0.0, 0.0, self.params.hover_thrust(), 0.0, 0.0, 0.0];
        (x, vec![0.0, 0.0])
    }
}

impl Default for Quadrotor {
    fn default() -> Self {
        Quadrotor::new(QuadrotorParams::default())
    }
}

/// Nominal extended model.
pub fn nominal_extended_model(params: QuadrotorParams) -> Quadrotor {
    Quadrotor::new(params)
}

impl PureFeedbackModel for Quadrotor {
    fn relative_degree(&self) -> usize {
        4
    }

    fn width(&self) -> usize {
        2
    }

    fn block<T: Scalar>(&self, i: usize, xs: &[T]) -> Vec<T> {
        match i {
            0 => xs[2..4].to_vec(),
            1 => thrust_acceleration(&self.params, xs[4], xs[5]).to_vec(),
            2 => xs[6..8].to_vec(),
            3 => vec![xs[8], xs[9] / self.params.inertia],
            _ => panic!("quadrotor has 4 blocks, got block index {i}"),
        }
    }

    fn inverse<T: Scalar>(&self, k: usize, _xs: &[T], xdot: &[T]) -> Result<Vec<T>, JetError> {
        match k {
            0 | 2 => Ok(xdot.to_vec()),
            1 => {
                let ax = xdot[0];
                let az = xdot[1] + self.params.gravity;
                let thrust = (ax * ax + az * az).try_sqrt()? * self.params.mass;
                let lateral = if self.faulty_attitude_inverse { ax } else { -ax };
                let theta = lateral.try_atan2(az)?;
                Ok(vec![thrust, theta])
            }
            3 => Ok(vec![xdot[0], xdot[1] * self.params.inertia]),
            _ => panic!("quadrotor has 4 inverse maps, got index {k}"),
        }
    }

    fn sub_state_valid(&self, k: usize, xk: &[f64]) -> Result<(), String> {
        if xk.iter().any(|v| !v.is_finite()) {
            return Err(format!("non-finite sub-state {k}: {xk:?}"));
        }
        if k == 2 {
            let (thrust, theta) = (xk[0], xk[1]);
            if thrust <= self.min_thrust {
                return Err(format!("thrust {thrust} <= {}", self.min_thrust));
            }
            if !(theta > -PI && theta < PI) {
                return Err(format!("attitude {theta} outside (-pi, pi)"));
            }
        }
        Ok(())
    }
}

/// Extended (8-state) plant; `drag` toggles the ground-truth disturbance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtendedPlant {
    pub params: QuadrotorParams,
    pub drag: bool,
}

impl ExtendedPlant {
    pub fn truth(params: QuadrotorParams) -> Self {
        ExtendedPlant { params, drag: true }
    }

    pub fn nominal(params: QuadrotorParams) -> Self {
        ExtendedPlant {
            params,
            drag: false,
        }
    }
}

impl Dynamics for ExtendedPlant {
    fn state_dim(&self) -> usize {
        EXTENDED_DIM
    }

    fn input_dim(&self) -> usize {
        INPUT_DIM
    }

    fn rhs<T: Scalar>(&self, x: &[T], u: &[T]) -> Vec<T> {
        let mut dx = nominal_rhs(&Quadrotor::new(self.params), x, u);
        if self.drag {
            let d = drag(self.params.linear_drag, self.params.parasitic_drag, &x[2..4]);
            dx[2] = dx[2] + d[0];
            dx[3] = dx[3] + d[1];
        }
        dx
    }
}

/// Original (6-state) plant with inputs `[F, tau]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OriginalPlant {
    pub params: QuadrotorParams,
    pub drag: bool,
}

impl OriginalPlant {
    pub fn truth(params: QuadrotorParams) -> Self {
        OriginalPlant { params, drag: true }
    }

    pub fn nominal(params: QuadrotorParams) -> Self {
        OriginalPlant {
            params,
            drag: false,
        }
    }
}

impl Dynamics for OriginalPlant {
    fn state_dim(&self) -> usize {
        ORIGINAL_DIM
    }

    fn input_dim(&self) -> usize {
        INPUT_DIM
    }

    fn rhs<T: Scalar>(&self, x: &[T], u: &[T]) -> Vec<T> {
        let [mut ax, mut az] = thrust_acceleration(&self.params, u[0], x[4]);
        if self.drag {
            let d = drag(self.params.linear_drag, self.params.parasitic_drag, &x[2..4]);
            ax = ax + d[0];
            az = az + d[1];
        }
        vec![x[2], x[3], ax, az, x[5], u[1] / self.params.inertia]
    }
}

/// True extended plant: nominal dynamics plus drag on the velocity block.
pub fn true_plant_extended(params: &QuadrotorParams, x: &[f64], u: &[f64]) -> Vec<f64> {
    ExtendedPlant::truth(*params).rhs(x, u)
}

/// True original plant used for data collection.
pub fn true_plant_original(params: &QuadrotorParams, x: &[f64], u: &[f64]) -> Vec<f64> {
    OriginalPlant::truth(*params).rhs(x, u)
}

/// `[p, v, theta, omega]` plus thrust state `(F, F')` into extended coordinates.
pub fn extend_state(x6: &[f64], thrust: f64, thrust_rate: f64) -> [f64; EXTENDED_DIM] {
    [x6[0], x6[1], x6[2], x6[3], thrust, x6[4], thrust_rate, x6[5]]
}

/// Extended state back to original coordinates; also returns `(F, F')`.
pub fn project_state(x8: &[f64]) -> ([f64; ORIGINAL_DIM], f64, f64) {
    ([x8[0], x8[1], x8[2], x8[3], x8[5], x8[7]], x8[4], x8[6])
}

/// Wraps an unwrapped attitude into `[-pi, pi)` for reporting.
pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

/// Random extended state and input with `F` in `[1, 20]`,
/// `theta` in `(-pi/2, pi/2)` and every other coordinate in `[-5, 5]`.
pub fn sample_valid_point<R: Rng>(rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let mut x: Vec<f64> = (0..EXTENDED_DIM).map(|_| rng.gen_range(-5.0..=5.0)).collect();
    x[4] = rng.gen_range(1.0..=20.0);
    x[5] = rng.gen_range(-0.4999 * PI..0.4999 * PI);
    let u = (0..INPUT_DIM).map(|_| rng.gen_range(-5.0..=5.0)).collect();
    (x, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pure_feedback::{check_regularity, eval_dynamics, verify_inverse_identity};
    use crate::Error;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent transcription of the extended quadrotor dynamics.
    fn hand_coded(p: &QuadrotorParams, x: &[f64], u: &[f64]) -> Vec<f64> {
        let (f, th) = (x[4], x[5]);
        vec![
            x[2],
            x[3],
            -f * th.sin() / p.mass,
            (f * th.cos() - p.mass * p.gravity) / p.mass,
            x[6],
            x[7],
            u[0],
            u[1] / p.inertia,
        ]
    }

    #[test]
    fn hover_is_equilibrium() {
        let q = Quadrotor::default();
        let (x, u) = q.hover([0.0, 0.0]);
        assert_eq!(eval_dynamics(&q, &x, &u).unwrap(), vec![0.0; 8]);
        let mut moving = x.clone();
        moving[2] = 1.0;
        moving[3] = 2.0;
        let dx = eval_dynamics(&q, &moving, &u).unwrap();
        assert_eq!(&dx[..2], &[1.0, 2.0]);
        assert!(dx[2..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dynamics_match_hand_coded() {
        let q = Quadrotor::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let (x, u) = sample_valid_point(&mut rng);
            let a = eval_dynamics(&q, &x, &u).unwrap();
            let b = hand_coded(&q.params, &x, &u);
            for (ai, bi) in a.iter().zip(&b) {
                assert_relative_eq!(ai, bi, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn invalid_thrust_is_rejected() {
        let q = Quadrotor::default();
        let (mut x, u) = q.hover([0.0, 0.0]);
        x[4] = 0.05;
        assert!(matches!(eval_dynamics(&q, &x, &u), Err(Error::Domain(_))));
    }

    #[test]
    fn regularity_at_hover_and_singularity() {
        let q = Quadrotor::default();
        let (mut x, u) = q.hover([0.0, 0.0]);
        let report = check_regularity(&q, &x, &u, 1e-9).unwrap();
        assert!(report.all_passed());
        assert_relative_eq!(report.determinants[1], 9.81, epsilon = 1e-12);
        assert_relative_eq!(report.determinants[3], 10.0, epsilon = 1e-12);
        x[4] = 0.0;
        let report = check_regularity(&q, &x, &u, 1e-9).unwrap();
        assert!(!report.passed[1]);
        assert_eq!(report.determinants[1], 0.0);
    }

    #[test]
    fn determinant_is_linear_in_thrust() {
        let mut params = QuadrotorParams::default();
        params.mass = 2.0;
        let q = Quadrotor::new(params);
        let (mut x, u) = q.hover([0.0, 0.0]);
        for thrust in [1e-3, 0.01, 0.5, 3.0] {
            x[4] = thrust;
            x[5] = 0.3;
            let report = check_regularity(&q, &x, &u, 0.0).unwrap();
            assert_relative_eq!(report.determinants[1], thrust / 4.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn inverse_identities() {
        let q = Quadrotor::default();
        let hover = vec![q.hover([0.0, 0.0])];
        assert_eq!(verify_inverse_identity(&q, &hover, 0.0).worst(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<_> = (0..1000).map(|_| sample_valid_point(&mut rng)).collect();
        let report = verify_inverse_identity(&q, &samples, 1e-9);
        assert!(report.passed(), "{report:?}");

        let faulty = q.with_fault_injection();
        assert!(!verify_inverse_identity(&faulty, &samples, 1e-9).passed());
    }

    #[test]
    fn attitude_inverse_at_zero_acceleration() {
        let q = Quadrotor::default();
        let out = q.inverse(1, &[0.0; 4], &[0.0, 0.0]).unwrap();
        assert_eq!(out, vec![9.81, 0.0]);
    }

    #[test]
    fn disturbance_values() {
        let p = QuadrotorParams::default();
        assert_eq!(true_disturbance(&p, [0.0, 0.0]), [0.0, 0.0]);
        let d = true_disturbance(&p, [1.0, 0.0]);
        assert_relative_eq!(d[0], -0.11, epsilon = 1e-15);
        assert_eq!(d[1], 0.0);
        let d = true_disturbance(&p, [0.0, -2.0]);
        assert_eq!(d[0], 0.0);
        assert_relative_eq!(d[1], 0.42, epsilon = 1e-15);
    }

    #[test]
    fn true_plants() {
        let p = QuadrotorParams::default();
        let q = Quadrotor::new(p);
        let (x, u) = q.hover([0.3, -0.2]);
        assert_eq!(true_plant_extended(&p, &x, &u), vec![0.0; 8]);

        let no_drag = p.without_drag();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (x, u) = sample_valid_point(&mut rng);
            assert_eq!(true_plant_extended(&no_drag, &x, &u), eval_dynamics(&q, &x, &u).unwrap());
            let truth = true_plant_extended(&p, &x, &u);
            let nominal = eval_dynamics(&q, &x, &u).unwrap();
            let d = true_disturbance(&p, [x[2], x[3]]);
            for i in 0..8 {
                let expect = nominal[i] + if i == 2 { d[0] } else if i == 3 { d[1] } else { 0.0 };
                assert_relative_eq!(truth[i], expect, epsilon = 1e-14);
            }

            // original plant = extended plant on shared coordinates with F' = F'' = 0
            let (x6, thrust, _) = project_state(&x);
            let x8 = extend_state(&x6, thrust, 0.0);
            let ext = true_plant_extended(&p, &x8, &[0.0, u[1]]);
            let orig = true_plant_original(&p, &x6, &[thrust, u[1]]);
            let (proj, dthrust, ddthrust) = project_state(&ext);
            assert_eq!(dthrust, 0.0);
            assert_eq!(ddthrust, 0.0);
            for i in 0..6 {
                assert_relative_eq!(proj[i], orig[i], epsilon = 1e-14);
            }
        }
        let x6 = [0.0; 6];
        assert_eq!(
            true_plant_original(&p, &x6, &[p.hover_thrust(), 0.0]),
            vec![0.0; 6]
        );
    }

    #[test]
    fn extend_and_project_round_trip() {
        let x6 = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let x8 = extend_state(&x6, 7.0, 8.0);
        assert_eq!(x8, [1.0, 2.0, 3.0, 4.0, 7.0, 5.0, 8.0, 6.0]);
        assert_eq!(project_state(&x8), (x6, 7.0, 8.0));
        let zero = extend_state(&[0.0; 6], 0.0, 0.0);
        assert_eq!(project_state(&zero).0, [0.0; 6]);
    }

    #[test]
    fn wrap_angle_range() {
        assert_relative_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-15);
        assert_eq!(wrap_angle(0.25), 0.25);
    }

    #[test]
    fn params_validation() {
        assert!(QuadrotorParams::default().validate().is_ok());
        let mut p = QuadrotorParams::default();
        p.inertia = -1.0;
        assert!(p.validate().is_err());
    }
}
