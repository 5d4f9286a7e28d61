//! Cartpole swing-up: a cart on a frictionless rail with a pole modelled as
//! a point mass at the tip of a massless rod.
//!
//! State `[x, theta, x_dot, theta_dot]` with `theta = 0` pole upright.
//! Accelerations come from the manipulator equations
//! `M(q) qdd = rhs(q, qd, u)` with
//!
//! ```text
//! M   = [ m_c + m_p        m_p l cos(theta) ]
//!       [ m_p l cos(theta) m_p l^2          ]
//! rhs = [ u - b_c x_dot + m_p l theta_dot^2 sin(theta) ]
//!       [ m_p g l sin(theta) - b_p theta_dot           ]
//! ```
//!
//! solved in closed form via the 2x2 determinant.

use serde::{Deserialize, Serialize};

use super::{wrap_angle, EnvSpec, Observation, RewardVariant};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CartpoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_length: f64,
    pub gravity: f64,
    pub cart_damping: f64,
    pub pivot_damping: f64,
    /// Reward kernel widths.
    pub position_scale: f64,
    pub angle_scale: f64,
    pub cart_velocity_scale: f64,
    pub angular_velocity_scale: f64,
    pub action_scale: f64,
}

impl Default for CartpoleParams {
    fn default() -> Self {
        CartpoleParams {
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_length: 0.6,
            gravity: 9.81,
            cart_damping: 0.05,
            pivot_damping: 0.01,
            position_scale: 1.0,
            angle_scale: 0.7,
            cart_velocity_scale: 2.0,
            angular_velocity_scale: 4.0,
            action_scale: 20.0,
        }
    }
}

pub(super) fn spec(reward_variant: RewardVariant) -> EnvSpec {
    EnvSpec {
        kind: super::EnvKind::Cartpole(CartpoleParams::default()),
        reward_variant,
        dt: 0.02,
        episode_cap: 400,
        action_bounds: vec![10.0],
        init_center: vec![0.0, std::f64::consts::PI, 0.0, 0.0],
        init_half_width: vec![0.5, std::f64::consts::PI, 0.3, 0.5],
    }
}

pub(super) fn derivative(p: &CartpoleParams, coords: &[f64], u: f64) -> Vec<f64> {
    let (x_dot, theta, theta_dot) = (coords[2], coords[1], coords[3]);
    let (sin_t, cos_t) = theta.sin_cos();
    let (mc, mp, l) = (p.cart_mass, p.pole_mass, p.pole_length);

    let m11 = mc + mp;
    let m12 = mp * l * cos_t;
    let m22 = mp * l * l;
    let r1 = u - p.cart_damping * x_dot + mp * l * theta_dot * theta_dot * sin_t;
    let r2 = mp * p.gravity * l * sin_t - p.pivot_damping * theta_dot;

    let det = m11 * m22 - m12 * m12;
    let x_ddot = (m22 * r1 - m12 * r2) / det;
    let theta_ddot = (m11 * r2 - m12 * r1) / det;

    vec![x_dot, theta_dot, x_ddot, theta_ddot]
}

pub(super) fn observe(coords: &[f64]) -> Observation {
    vec![
        coords[0],
        coords[1].sin(),
        coords[1].cos(),
        coords[2],
        coords[3],
    ]
}

pub(super) fn task_reward(
    p: &CartpoleParams,
    variant: RewardVariant,
    coords: &[f64],
    u: f64,
) -> f64 {
    let angle_err = wrap_angle(coords[1]) / p.angle_scale;
    match variant {
        RewardVariant::Underspecified => (-(angle_err * angle_err)).exp(),
        RewardVariant::Full => {
            let pos = coords[0] / p.position_scale;
            let xv = coords[2] / p.cart_velocity_scale;
            let av = coords[3] / p.angular_velocity_scale;
            let act = u / p.action_scale;
            (-(angle_err * angle_err + pos * pos + xv * xv + av * av + act * act)).exp()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn matches_lagrangian_oracle() {
        // Frozen from an independent symbolic derivation of the same
        // Lagrangian (point mass at the rod tip), solved for the
        // accelerations and evaluated at this state.
        let p = CartpoleParams::default();
        let coords = [0.3, 2.1, -0.7, 1.4];
        let d = derivative(&p, &coords, 3.5);
        assert_eq!(d[0], -0.7);
        assert_eq!(d[1], 1.4);
        assert_abs_diff_eq!(d[2], 3.7712353787926753, epsilon = 1e-12);
        assert_abs_diff_eq!(d[3], 16.897740073341282, epsilon = 1e-12);
    }

    #[test]
    fn hanging_rest_is_equilibrium() {
        let p = CartpoleParams::default();
        let d = derivative(&p, &[0.0, std::f64::consts::PI, 0.0, 0.0], 0.0);
        for v in d {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn underspecified_ignores_cart_exactly() {
        let p = CartpoleParams::default();
        let a = task_reward(&p, RewardVariant::Underspecified, &[0.0, 0.7, 0.0, 0.0], 1.0);
        let b = task_reward(
            &p,
            RewardVariant::Underspecified,
            &[10.0, 0.7, -4.0, 9.0],
            -3.0,
        );
        assert_eq!(a, b);
    }

    #[test]
    fn full_reward_peaks_at_upright_origin() {
        let p = CartpoleParams::default();
        assert_eq!(
            task_reward(&p, RewardVariant::Full, &[0.0, 0.0, 0.0, 0.0], 0.0),
            1.0
        );
        assert!(task_reward(&p, RewardVariant::Full, &[0.5, 0.0, 0.0, 0.0], 0.0) < 1.0);
    }
}
