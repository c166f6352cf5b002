//! Flatness-preserving residual learning for pure-feedback systems.
//!
//! The crate provides truncated Taylor arithmetic, pure-feedback models, a
//! lower-triangular learned residual, the recursive flatness diffeomorphism
//! of the augmented model, and the quadrotor experiments built on top of them
//! (open-loop replay, flat tracking control and a multiple-shooting NMPC
//! baseline).

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod flat_map;
pub mod nmpc;
pub mod pure_feedback;
pub mod quadrotor;
pub mod residual;
pub mod sim;
pub mod taylor;
pub mod trajectory;
pub mod verify;

pub use dynamics::Dynamics;
pub use error::{Error, Result};
pub use flat_map::{AugmentedModel, FlatnessDiffeomorphism};
pub use pure_feedback::{IntegratorChain, PureFeedbackModel};
pub use quadrotor::{ExtendedPlant, OriginalPlant, Quadrotor, QuadrotorParams};
pub use residual::{LowerTriangularResidual, ResidualBlock, TrainConfig};
pub use taylor::{Dual, Jet, JetError, Scalar};
pub use trajectory::Trajectory;
