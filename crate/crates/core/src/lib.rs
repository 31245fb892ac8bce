//! Learning metriplectic (energy-conserving, entropy-producing) dynamics.
//!
//! The crate is organised bottom-up:
//!
//! * [`tape`]: scalar reverse-mode differentiation and the [`Scalar`] trait
//!   shared by plain and recorded arithmetic.
//! * [`nets`]: tanh MLPs and the maps packing their outputs into matrices.
//! * [`brackets`]: the operators `L`, `M` and the learned vector field.
//! * [`odeint`]: RK4 and adaptive Dormand–Prince integration.
//! * [`systems`]: closed-form benchmark systems and dataset generation.
//! * [`training`]: Adamax, the rollout training loops and checkpoints.
//! * [`metrics`]: error metrics, thermodynamic diagnostics, scaling formulas.

pub mod brackets;
pub mod dense;
pub mod error;
pub mod metrics;
pub mod nets;
pub mod odeint;
pub mod systems;
pub mod tape;
pub mod training;

pub use brackets::MetriplecticModel;
pub use dense::Mat;
pub use error::{Error, Result};
pub use nets::{DMode, MlpParams, ModelConfig, NetKind};
pub use odeint::{Method, SolverConfig, Trajectory};
pub use systems::{Dataset, SystemSpec};
pub use tape::{Scalar, Tape, Var};
pub use training::{Checkpoint, TrainConfig};

