//! Learning a robot's sensorimotor forward model from optical flow.
//!
//! An incremental Gaussian mixture ([`igmm::Mixture`]) is trained online on
//! per-cell pairs of (current flow, action) → future flow change, and then
//! used to predict flow, estimate the actuation delay of a log, and flag
//! sensorimotor situations that tend to precede collisions.

pub mod alignment;
pub mod collision;
pub mod error;
pub mod eval;
pub mod forward_model;
pub mod igmm;
pub mod par;
pub mod sensorimotor;
pub mod simulator;
pub mod stream_log;
pub mod textio;

pub use error::{Error, Result};
pub use forward_model::{ForwardModel, ForwardModelConfig};
pub use igmm::{IgmmConfig, Mixture};
pub use par::Execution;
pub use sensorimotor::{
    ActionCommand, ActionKind, FeatureLayout, FlowGrid, FlowVector, SensorimotorFrame, TrainingPair,
};
pub use stream_log::{LogHeader, StreamLog};
