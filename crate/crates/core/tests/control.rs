use proptest::prelude::*;
use rlad::control::{policy_to_command, target_speed, Pid, PidGains};

#[test]
fn target_speed_spans_zero_to_max() {
    assert_eq!(target_speed(-1.0, 6.0), 0.0);
    assert_eq!(target_speed(0.0, 6.0), 3.0);
    assert_eq!(target_speed(1.0, 6.0), 6.0);
    assert_eq!(target_speed(5.0, 6.0), 6.0);
}

#[test]
fn below_target_accelerates_above_target_brakes() {
    let mut pid = Pid::new(PidGains::default());
    let (t, b) = pid.step(5.0, 0.0, 0.1);
    assert!(t > 0.0 && b == 0.0);
    pid.reset();
    let (t, b) = pid.step(0.0, 5.0, 0.1);
    assert!(t == 0.0 && b > 0.0);
}

#[test]
fn integral_is_clamped() {
    let mut pid = Pid::new(PidGains::default());
    for _ in 0..1000 {
        pid.step(6.0, 0.0, 0.1);
    }
    assert_eq!(pid.integral, PidGains::default().integral_clamp);
}

proptest! {
    #[test]
    fn throttle_and_brake_are_exclusive_and_bounded(
        steps in prop::collection::vec((-1.5f32..1.5, 0.0f64..12.0), 1..40),
        steer in -2.0f32..2.0,
    ) {
        let mut pid = Pid::new(PidGains::default());
        for (norm, speed) in steps {
            let c = policy_to_command([steer, norm], speed, 0.1, &mut pid);
            prop_assert!(c.throttle * c.brake == 0.0);
            prop_assert!((0.0..=1.0).contains(&c.throttle) && (0.0..=1.0).contains(&c.brake));
            prop_assert!((-1.0..=1.0).contains(&c.steering));
        }
    }
}
