//! Simulation, reference trajectories, flat tracking control and metrics.

mod controller;
mod datagen;
mod integrate;
mod observer;
mod reference;
mod run;

pub use controller::{
    check_hurwitz, gain_polynomial_roots, virtual_input, Controller, DerivativeSource,
    FlatTrackingController, DEFAULT_GAINS,
};
pub use datagen::{generate_training_data, DataGenConfig};
pub use integrate::{rk4_map, rk4_step, rk4_step_timed};
pub use observer::{ChainObserver, DEFAULT_OBSERVER_POLE};
pub use reference::{Reference, ReferenceKind};
pub use run::{
    closed_loop_run, open_loop_rollout, position_error, step_count, ClosedLoopConfig,
    ClosedLoopRun, TimingStats,
};
