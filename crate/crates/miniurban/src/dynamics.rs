//! Ego vehicle model: kinematic bicycle referenced at the center of gravity.

use crate::error::{EnvError, Result};
use crate::geom::{OrientedBox, Pose, Vec2};

/// Simulation step, seconds.
pub const DT: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VehicleCommand {
    pub throttle: f64,
    pub brake: f64,
    pub steering: f64,
}

impl VehicleCommand {
    pub fn new(throttle: f64, brake: f64, steering: f64) -> Self {
        Self {
            throttle,
            brake,
            steering,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.throttle)
            && (0.0..=1.0).contains(&self.brake)
            && (-1.0..=1.0).contains(&self.steering);
        if ok {
            Ok(())
        } else {
            Err(EnvError::Usage(format!(
                "vehicle command out of range: {self:?}"
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BicycleParams {
    pub front_axle: f64,
    pub rear_axle: f64,
    /// Road-wheel angle at full steering command, radians.
    pub max_steer: f64,
    pub max_speed: f64,
    /// Acceleration at full throttle, m/s^2.
    pub throttle_accel: f64,
    /// Deceleration at full brake, m/s^2.
    pub brake_decel: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Default for BicycleParams {
    fn default() -> Self {
        Self {
            front_axle: 1.35,
            rear_axle: 1.35,
            max_steer: 0.6,
            max_speed: 10.0,
            throttle_accel: 3.0,
            brake_decel: 6.0,
            half_length: 2.25,
            half_width: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EgoState {
    pub pose: Pose,
    pub speed: f64,
    /// Last applied steering command in [-1, 1].
    pub steering: f64,
}

impl EgoState {
    pub fn bbox(&self, params: &BicycleParams) -> OrientedBox {
        OrientedBox {
            pose: self.pose,
            half_length: params.half_length,
            half_width: params.half_width,
        }
    }
}

impl BicycleParams {
    pub fn accel(&self, cmd: &VehicleCommand) -> f64 {
        self.throttle_accel * cmd.throttle - self.brake_decel * cmd.brake
    }

    /// Advances the ego by one step of `dt` seconds.
    pub fn step(&self, state: &EgoState, cmd: &VehicleCommand, dt: f64) -> EgoState {
        let speed = (state.speed + self.accel(cmd) * dt).clamp(0.0, self.max_speed);
        let delta = cmd.steering * self.max_steer;
        let wheelbase = self.front_axle + self.rear_axle;
        let beta = (self.rear_axle / wheelbase * delta.tan()).atan();
        let h = state.pose.heading;
        let pos = state.pose.pos + Vec2::from_heading(h + beta) * (speed * dt);
        let heading = crate::geom::wrap_angle(h + speed / self.rear_axle * beta.sin() * dt);
        EgoState {
            pose: Pose { pos, heading },
            speed,
            steering: cmd.steering,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rest() -> EgoState {
        EgoState {
            pose: Pose::new(0.0, 0.0, 0.0),
            speed: 0.0,
            steering: 0.0,
        }
    }

    #[test]
    fn full_throttle_for_one_second() {
        let p = BicycleParams::default();
        let mut s = rest();
        for _ in 0..10 {
            s = p.step(&s, &VehicleCommand::new(1.0, 0.0, 0.0), DT);
        }
        assert!((s.speed - 3.0).abs() < 1e-12);
        // Semi-implicit Euler: sum of 0.3 k * 0.1 for k = 1..10.
        assert!((s.pose.pos.x - 1.65).abs() < 1e-12);
        assert_eq!(s.pose.pos.y, 0.0);
    }

    #[test]
    fn speed_never_negative_and_capped() {
        let p = BicycleParams::default();
        let mut s = rest();
        s = p.step(&s, &VehicleCommand::new(0.0, 1.0, 0.0), DT);
        assert_eq!(s.speed, 0.0);
        for _ in 0..100 {
            s = p.step(&s, &VehicleCommand::new(1.0, 0.0, 0.0), DT);
        }
        assert_eq!(s.speed, p.max_speed);
    }

    #[test]
    fn steady_turn_radius() {
        let p = BicycleParams::default();
        let mut s = EgoState {
            speed: 4.0,
            ..rest()
        };
        let cmd = VehicleCommand::new(0.0, 0.0, 0.5);
        let delta: f64 = 0.3;
        let beta = (0.5 * delta.tan()).atan();
        let yaw_rate = 4.0 / 1.35 * beta.sin();
        for _ in 0..10 {
            s = p.step(&s, &cmd, DT);
        }
        assert!((s.pose.heading - yaw_rate).abs() < 1e-9);
    }

    #[test]
    fn command_bounds_are_checked() {
        assert!(VehicleCommand::new(1.0, 0.0, -1.0).validate().is_ok());
        assert!(VehicleCommand::new(1.1, 0.0, 0.0).validate().is_err());
        assert!(VehicleCommand::new(0.0, 0.0, f64::NAN).validate().is_err());
    }
}
