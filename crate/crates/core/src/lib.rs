//! Soft actor-critic driving agent learning from top-down pixels, with the
//! training loop, replay buffer, speed controller and benchmark harness.

// `!(x > 0.0)` deliberately rejects NaN in config checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod bench;
pub mod checkpoint;
pub mod control;
pub mod encoders;
pub mod error;
pub mod plot;
pub mod replay;
pub mod trainer;

pub use agent::{Agent, AgentConfig, UpdateMetrics};
pub use control::{policy_to_command, Pid, PidGains};
pub use encoders::{AlixConfig, Encoders, ObsBatch, WaypointEncoderKind};
pub use error::{Error, ErrorKind, Result};
pub use replay::{Batch, ReplayBuffer, Transition};
pub use trainer::{RunConfig, Trainer};
