#![allow(dead_code)]

use std::sync::Arc;

use miniurban::{Observation, FRAME_STACK, NUM_WAYPOINTS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rlad::replay::Transition;
use rlad::{Agent, AgentConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_obs(resolution: usize, rng: &mut impl Rng) -> Observation {
    let frame = |rng: &mut dyn rand::RngCore| -> Arc<[u8]> {
        (0..3 * resolution * resolution)
            .map(|_| rng.random::<u8>())
            .collect::<Vec<_>>()
            .into()
    };
    let frames: [Arc<[u8]>; FRAME_STACK] = std::array::from_fn(|_| frame(rng));
    let waypoints: [[f32; 2]; NUM_WAYPOINTS] = std::array::from_fn(|i| {
        [
            2.0 * i as f32 + rng.random_range(-0.5..0.5),
            rng.random_range(-1.0..1.0),
        ]
    });
    let measurements: [[f32; 2]; FRAME_STACK] =
        std::array::from_fn(|_| [rng.random_range(0.0..8.0), rng.random_range(-1.0..1.0)]);
    Observation {
        resolution,
        frames,
        waypoints,
        measurements,
    }
}

pub fn random_transition(resolution: usize, rng: &mut impl Rng) -> Transition {
    let terminal = rng.random_bool(0.2);
    Transition {
        obs: random_obs(resolution, rng),
        action: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        reward: rng.random_range(-1.0..1.0),
        next_obs: random_obs(resolution, rng),
        terminal,
        truncated: !terminal && rng.random_bool(0.1),
        label: rng.random_range(0..3),
    }
}

/// Small 64 px agent for fast tests.
pub fn small_config() -> AgentConfig {
    AgentConfig {
        resolution: 64,
        hidden: 32,
        ..AgentConfig::default()
    }
}

pub fn small_agent(seed: u64) -> Agent {
    Agent::new(small_config(), &mut rng(seed)).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}
