//! A small deterministic top-down urban driving simulator.
//!
//! Lane-graph maps with signalized junctions, scripted traffic and
//! pedestrians, a global route planner, a dense driving reward, and
//! ego-centric top-down image observations.

// `!(x > 0.0)` deliberately rejects NaN in config checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod geom;
pub mod map;
pub mod palette;
pub mod planner;
pub mod render;
pub mod reward;
pub mod scenario;

pub use agents::LightPhase;
pub use dynamics::{VehicleCommand, DT};
pub use env::{
    MiniUrban, Observation, StepInfo, Termination, TrafficLightLabel, WorldState, FRAME_STACK,
    NUM_WAYPOINTS,
};
pub use error::{EnvError, Result};
pub use map::Map;
pub use planner::{plan_route, Route};
pub use render::{save_png, Frame};
pub use reward::RewardComponents;
pub use scenario::{Density, RouteSpec, ScenarioConfig};
