//! Longitudinal speed control: the policy picks a target speed, a PID turns it
//! into throttle or brake.

use serde::{Deserialize, Serialize};

use miniurban::VehicleCommand;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Bound on the integral of the speed error (m).
    pub integral_clamp: f64,
    /// Controller outputs smaller than this in magnitude coast.
    pub deadband: f64,
    /// Speed reached at `speed_norm = 1` (m/s).
    pub max_speed: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            kp: 0.75,
            ki: 0.25,
            kd: 0.05,
            integral_clamp: 2.0,
            deadband: 0.02,
            max_speed: 6.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pid {
    pub gains: PidGains,
    pub integral: f64,
    pub prev_error: Option<f64>,
}

impl Pid {
    pub fn new(gains: PidGains) -> Self {
        Self {
            gains,
            integral: 0.0,
            prev_error: None,
        }
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = None;
    }

    /// One controller tick; returns `(throttle, brake)`, never both positive.
    pub fn step(&mut self, target_speed: f64, current_speed: f64, dt: f64) -> (f64, f64) {
        let g = self.gains;
        let e = target_speed - current_speed;
        self.integral = (self.integral + e * dt).clamp(-g.integral_clamp, g.integral_clamp);
        // No derivative kick on the first tick after a reset.
        let de = self.prev_error.map_or(0.0, |p| (e - p) / dt);
        self.prev_error = Some(e);
        let u = g.kp * e + g.ki * self.integral + g.kd * de;
        if u >= g.deadband {
            (u.clamp(0.0, 1.0), 0.0)
        } else if u <= -g.deadband {
            (0.0, (-u).clamp(0.0, 1.0))
        } else {
            (0.0, 0.0)
        }
    }
}

/// Maps `speed_norm` in `[-1, 1]` affinely onto `[0, max_speed]`.
pub fn target_speed(speed_norm: f64, max_speed: f64) -> f64 {
    (speed_norm.clamp(-1.0, 1.0) + 1.0) / 2.0 * max_speed
}

/// Turns a policy action `(steer, speed_norm)` into a vehicle command.
pub fn policy_to_command(
    action: [f32; 2],
    current_speed: f64,
    dt: f64,
    pid: &mut Pid,
) -> VehicleCommand {
    let target = target_speed(action[1] as f64, pid.gains.max_speed);
    let (throttle, brake) = pid.step(target, current_speed, dt);
    VehicleCommand {
        throttle,
        brake,
        steering: (action[0] as f64).clamp(-1.0, 1.0),
    }
}
