//! Dense driving reward.

use crate::env::Termination;

/// Desired cruising speed, m/s.
pub const DESIRED_SPEED: f64 = 4.0;
/// Speed error normalizer, m/s.
pub const SPEED_RANGE: f64 = 6.0;
/// Distance ahead within which a red/yellow light or obstacle asks for a stop.
pub const STOP_DISTANCE: f64 = 10.0;
pub const TERMINAL_PENALTY: f64 = -10.0;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RewardComponents {
    pub speed: f64,
    pub position: f64,
    pub rotation: f64,
    pub terminal: f64,
}

impl RewardComponents {
    pub fn total(&self) -> f64 {
        self.speed + self.position + self.rotation + self.terminal
    }
}

/// Reward for one step. A failure step is worth exactly the terminal
/// penalty; shaping terms are dropped so the total stays at the bound.
pub fn reward(
    speed: f64,
    target_speed: f64,
    lateral: f64,
    heading_error: f64,
    termination: Option<Termination>,
) -> RewardComponents {
    if termination.is_some_and(|t| t.is_failure()) {
        return RewardComponents {
            terminal: TERMINAL_PENALTY,
            ..Default::default()
        };
    }
    RewardComponents {
        speed: 1.0 - (speed - target_speed).abs() / SPEED_RANGE,
        position: -0.5 * (lateral.abs() / 2.0).min(1.0),
        rotation: -0.3 * heading_error.abs(),
        terminal: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_driving_is_one() {
        assert_eq!(
            reward(DESIRED_SPEED, DESIRED_SPEED, 0.0, 0.0, None).total(),
            1.0
        );
        assert_eq!(reward(0.0, 0.0, 0.0, 0.0, None).total(), 1.0);
    }

    #[test]
    fn failures_are_exactly_the_penalty() {
        for t in [
            Termination::CollisionPedestrian,
            Termination::CollisionVehicle,
            Termination::CollisionLayout,
            Termination::RedLight,
            Termination::Blocked,
        ] {
            assert_eq!(reward(3.0, 4.0, 1.0, 0.2, Some(t)).total(), -10.0);
        }
        let r = reward(4.0, 4.0, 0.0, 0.0, Some(Termination::Timeout));
        assert_eq!(r.total(), 1.0);
    }

    #[test]
    fn components_match_hand_values() {
        let r = reward(1.0, 4.0, -3.0, -0.5, None);
        assert!((r.speed - 0.5).abs() < 1e-12);
        assert_eq!(r.position, -0.5);
        assert!((r.rotation + 0.15).abs() < 1e-12);
    }
}
