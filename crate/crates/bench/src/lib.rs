//! Fixtures shared by the benchmarks.

use flatres::experiments::{diffeo_for, initial_state, nominal_diffeo};
use flatres::sim::Reference;
use flatres::verify::random_network_residual;
use flatres::{FlatnessDiffeomorphism, Quadrotor, QuadrotorParams};

/// Residual networks with the trained width and random weights; timing
/// does not depend on the weight values.
pub fn network_model() -> FlatnessDiffeomorphism<Quadrotor> {
    diffeo_for(QuadrotorParams::default(), random_network_residual(7, 32)).expect("valid residual")
}

pub fn nominal_model() -> FlatnessDiffeomorphism<Quadrotor> {
    nominal_diffeo(QuadrotorParams::default()).expect("nominal model")
}

/// True state on the circle at `t = 0`.
pub fn circle_start() -> (Reference, Vec<f64>) {
    let reference = Reference::circle();
    let x0 = initial_state(&QuadrotorParams::default(), &reference).expect("circle start");
    (reference, x0)
}
