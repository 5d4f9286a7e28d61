//! Two-link planar reacher: two joints with torque actuation in the
//! horizontal plane (no gravity), point masses at the link ends.
//!
//! State `[q1, q2, q1_dot, q2_dot]` with `q2` relative to the first link.
//! Accelerations from `M(q) qdd + c(q, qd) = tau - b qd` with
//!
//! ```text
//! M11 = (m1 + m2) l1^2 + m2 l2^2 + 2 m2 l1 l2 cos(q2)
//! M12 = m2 l2^2 + m2 l1 l2 cos(q2)
//! M22 = m2 l2^2
//! c1  = -h q2_dot (2 q1_dot + q2_dot),  c2 = h q1_dot^2,
//! h   = m2 l1 l2 sin(q2)
//! ```

use serde::{Deserialize, Serialize};

use super::{wrap_angle, EnvSpec, Observation, RewardVariant};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoLinkParams {
    pub mass_1: f64,
    pub mass_2: f64,
    pub length_1: f64,
    pub length_2: f64,
    /// Viscous damping per joint.
    pub damping: f64,
    /// Target joint configuration the full reward pins down.
    pub target: [f64; 2],
    /// Reward kernel widths.
    pub angle_scale: f64,
    pub velocity_scale: f64,
    pub action_scale: f64,
    pub fingertip_scale: f64,
}

impl Default for TwoLinkParams {
    fn default() -> Self {
        TwoLinkParams {
            mass_1: 1.0,
            mass_2: 1.0,
            length_1: 0.5,
            length_2: 0.5,
            damping: 0.05,
            target: [std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_2],
            angle_scale: 0.5,
            velocity_scale: 2.0,
            action_scale: 2.0,
            fingertip_scale: 0.25,
        }
    }
}

pub(super) fn spec(reward_variant: RewardVariant) -> EnvSpec {
    EnvSpec {
        kind: super::EnvKind::TwoLink(TwoLinkParams::default()),
        reward_variant,
        dt: 0.02,
        episode_cap: 400,
        action_bounds: vec![1.0, 1.0],
        init_center: vec![0.0, 0.0, 0.0, 0.0],
        init_half_width: vec![std::f64::consts::PI, std::f64::consts::PI, 0.5, 0.5],
    }
}

pub(super) fn derivative(p: &TwoLinkParams, coords: &[f64], tau: &[f64]) -> Vec<f64> {
    let (q2, q1d, q2d) = (coords[1], coords[2], coords[3]);
    let (m1, m2, l1, l2) = (p.mass_1, p.mass_2, p.length_1, p.length_2);
    let cos_q2 = q2.cos();

    let m11 = (m1 + m2) * l1 * l1 + m2 * l2 * l2 + 2.0 * m2 * l1 * l2 * cos_q2;
    let m12 = m2 * l2 * l2 + m2 * l1 * l2 * cos_q2;
    let m22 = m2 * l2 * l2;
    let h = m2 * l1 * l2 * q2.sin();
    let c1 = -h * q2d * (2.0 * q1d + q2d);
    let c2 = h * q1d * q1d;

    let r1 = tau[0] - p.damping * q1d - c1;
    let r2 = tau[1] - p.damping * q2d - c2;
    let det = m11 * m22 - m12 * m12;
    let q1dd = (m22 * r1 - m12 * r2) / det;
    let q2dd = (m11 * r2 - m12 * r1) / det;

    vec![q1d, q2d, q1dd, q2dd]
}

pub(super) fn observe(coords: &[f64]) -> Observation {
    vec![
        coords[0].sin(),
        coords[0].cos(),
        coords[1].sin(),
        coords[1].cos(),
        coords[2],
        coords[3],
    ]
}

/// Fingertip position in the plane.
pub fn fingertip(p: &TwoLinkParams, q1: f64, q2: f64) -> [f64; 2] {
    [
        p.length_1 * q1.cos() + p.length_2 * (q1 + q2).cos(),
        p.length_1 * q1.sin() + p.length_2 * (q1 + q2).sin(),
    ]
}

pub(super) fn task_reward(
    p: &TwoLinkParams,
    variant: RewardVariant,
    coords: &[f64],
    tau: &[f64],
) -> f64 {
    match variant {
        RewardVariant::Underspecified => {
            let tip = fingertip(p, coords[0], coords[1]);
            let goal = fingertip(p, p.target[0], p.target[1]);
            let dx = (tip[0] - goal[0]) / p.fingertip_scale;
            let dy = (tip[1] - goal[1]) / p.fingertip_scale;
            (-(dx * dx + dy * dy)).exp()
        }
        RewardVariant::Full => {
            let a1 = wrap_angle(coords[0] - p.target[0]) / p.angle_scale;
            let a2 = wrap_angle(coords[1] - p.target[1]) / p.angle_scale;
            let v1 = coords[2] / p.velocity_scale;
            let v2 = coords[3] / p.velocity_scale;
            let u1 = tau[0] / p.action_scale;
            let u2 = tau[1] / p.action_scale;
            (-(a1 * a1 + a2 * a2 + v1 * v1 + v2 * v2 + u1 * u1 + u2 * u2)).exp()
        }
    }
}
