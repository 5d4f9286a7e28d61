//! Torque-limited pendulum swing-up.
//!
//! State `[theta, theta_dot]` with `theta = 0` upright and `theta = pi`
//! hanging down; the torque bound is well below the peak gravity torque, so
//! reaching the top requires pumping.

use serde::{Deserialize, Serialize};

use super::{wrap_angle, EnvSpec, Observation, RewardVariant};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    /// Viscous damping at the pivot (N m s / rad).
    pub damping: f64,
    /// Reward kernel widths: angle (rad), velocity (rad/s), action (N m).
    pub angle_scale: f64,
    pub velocity_scale: f64,
    pub action_scale: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        PendulumParams {
            mass: 1.0,
            length: 1.0,
            gravity: 9.81,
            damping: 0.15,
            angle_scale: 0.7,
            velocity_scale: 2.0,
            action_scale: 4.0,
        }
    }
}

pub(super) fn spec(reward_variant: RewardVariant) -> EnvSpec {
    EnvSpec {
        kind: super::EnvKind::Pendulum(PendulumParams::default()),
        reward_variant,
        dt: 0.02,
        episode_cap: 400,
        action_bounds: vec![2.0],
        init_center: vec![std::f64::consts::PI, 0.0],
        init_half_width: vec![std::f64::consts::PI, 1.0],
    }
}

/// `theta_ddot = (g/l) sin(theta) + (u - b theta_dot) / (m l^2)`
pub(super) fn derivative(p: &PendulumParams, coords: &[f64], u: f64) -> Vec<f64> {
    let (theta, theta_dot) = (coords[0], coords[1]);
    let theta_ddot = (p.gravity / p.length) * theta.sin()
        + (u - p.damping * theta_dot) / (p.mass * p.length * p.length);
    vec![theta_dot, theta_ddot]
}

pub(super) fn observe(coords: &[f64]) -> Observation {
    vec![coords[0].sin(), coords[0].cos(), coords[1]]
}

pub(super) fn task_reward(
    p: &PendulumParams,
    variant: RewardVariant,
    coords: &[f64],
    u: f64,
) -> f64 {
    let angle_err = wrap_angle(coords[0]) / p.angle_scale;
    match variant {
        RewardVariant::Underspecified => (-(angle_err * angle_err)).exp(),
        RewardVariant::Full => {
            let vel = coords[1] / p.velocity_scale;
            let act = u / p.action_scale;
            (-(angle_err * angle_err + vel * vel + act * act)).exp()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn hanging_rest_is_equilibrium() {
        let p = PendulumParams::default();
        let d = derivative(&p, &[PI, 0.0], 0.0);
        assert_abs_diff_eq!(d[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn upright_has_no_gravity_torque() {
        let p = PendulumParams::default();
        let d = derivative(&p, &[0.0, 0.0], 0.0);
        assert_eq!(d, vec![0.0, 0.0]);
    }

    #[test]
    fn observation_encodes_angle() {
        assert_eq!(observe(&[0.0, 0.0]), vec![0.0, 1.0, 0.0]);
        let o = observe(&[PI / 2.0, -1.5]);
        assert_abs_diff_eq!(o[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(o[1], 0.0, epsilon = 1e-12);
        assert_eq!(o[2], -1.5);
    }

    #[test]
    fn observation_injective_modulo_full_turns() {
        let a = observe(&[0.4, 1.0]);
        let b = observe(&[0.4 + 2.0 * PI, 1.0]);
        let c = observe(&[0.5, 1.0]);
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        assert!(a.iter().zip(&c).any(|(x, y)| (x - y).abs() > 1e-6));
    }

    #[test]
    fn reward_maximal_at_target() {
        let p = PendulumParams::default();
        assert_eq!(task_reward(&p, RewardVariant::Full, &[0.0, 0.0], 0.0), 1.0);
        // a full turn away is still the target
        assert_abs_diff_eq!(
            task_reward(&p, RewardVariant::Full, &[2.0 * PI, 0.0], 0.0),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn underspecified_ignores_velocity_exactly() {
        let p = PendulumParams::default();
        let a = task_reward(&p, RewardVariant::Underspecified, &[0.9, 0.0], 0.3);
        let b = task_reward(&p, RewardVariant::Underspecified, &[0.9, 57.0], -1.8);
        assert_eq!(a, b);
    }
}
