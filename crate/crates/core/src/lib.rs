//! Compliant manipulation workbench.
//!
//! Rigid-body math and the Cholesky stiffness codec, a penalty-contact arm
//! simulator, forward-dynamics Cartesian compliance control, a teleoperation
//! service, an episode store, a chunked CVAE policy and the evaluation harness.

pub mod config;
pub mod control;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod policy;
pub mod rig;
pub mod teleop;
pub mod sim;
pub mod store;

pub use config::WorkbenchConfig;
pub use control::{ComplianceController, ControllerConfig, ControllerTarget, StiffnessMode, TargetSlot};
pub use error::{Error, Result};
pub use eval::{EvalConfig, RolloutReport};
pub use geometry::{CholeskyVector, Pose, StiffnessSpec, Twist, Wrench};
pub use policy::{Policy, PolicyConfig};
pub use rig::Rig;
pub use sim::{Observation, TaskKind, World};
