//! Deterministic continuous-control environments with explicit ODE dynamics.
//!
//! Three desk-scale systems are built in: pendulum swing-up, cartpole
//! swing-up and a two-link planar reacher. Each one defines its dynamics as
//! a plain ODE integrated with classical RK4 under a zero-order-hold action,
//! an observation map that encodes angles as (sin, cos) pairs, a box
//! initial-state distribution, and two task rewards: a `Full` variant that
//! constrains every state dimension and an `Underspecified` variant that
//! constrains only a designated subset, leaving the rest free.
//!
//! Raw states keep angles unwrapped so the closed-loop map stays smooth for
//! finite-difference Jacobians; wrapping happens only in the observation.

mod cartpole;
mod pendulum;
mod two_link;

pub use cartpole::CartpoleParams;
pub use pendulum::PendulumParams;
pub use two_link::TwoLinkParams;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw system state: physical coordinates (positions first, then
/// velocities) plus the step index within the current episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub coords: Vec<f64>,
    pub step_index: usize,
}

impl EnvState {
    pub fn new(coords: Vec<f64>) -> Self {
        EnvState {
            coords,
            step_index: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|c| c.is_finite())
    }
}

/// Observed projection of a state; width is fixed per environment.
pub type Observation = Vec<f64>;

/// Bounded control vector (torques or forces).
pub type ControlAction = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardVariant {
    /// Rewards proximity to the target configuration in every state
    /// dimension plus a small action penalty.
    Full,
    /// Rewards only the designated subset of dimensions (pendulum: angle
    /// only; cartpole: pole angle only; two-link: fingertip position only).
    Underspecified,
}

/// Which dynamical system an [`EnvSpec`] describes, with its constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "snake_case")]
pub enum EnvKind {
    Pendulum(PendulumParams),
    Cartpole(CartpoleParams),
    TwoLink(TwoLinkParams),
}

/// Complete description of an environment: dynamics constants, integration
/// timestep, action bounds, episode cap, reward variant and the box
/// initial-state distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub reward_variant: RewardVariant,
    /// Integration timestep in seconds.
    pub dt: f64,
    pub episode_cap: usize,
    /// Per-dimension action half-widths; actions are clamped to
    /// `[-bound, bound]` before integration.
    pub action_bounds: Vec<f64>,
    /// Center of the uniform initial-state box.
    pub init_center: Vec<f64>,
    /// Per-dimension half-width of the initial-state box.
    pub init_half_width: Vec<f64>,
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct Transition {
    pub next_state: EnvState,
    /// Observation of `next_state`.
    pub observation: Observation,
    /// Reward the learner trains on.
    pub reward: f64,
    /// Task reward, always computed, even when `reward` is intrinsic.
    pub task_reward: f64,
}

/// Anything the trainer can roll out: the raw environments and the
/// stabilising wrapper both implement this.
pub trait Mdp {
    fn spec(&self) -> &EnvSpec;

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        self.spec().reset(rng)
    }

    fn observe(&self, state: &EnvState) -> Observation {
        self.spec().observe(state)
    }

    fn step(&self, state: &EnvState, action: &[f64]) -> Result<Transition>;
}

impl Mdp for EnvSpec {
    fn spec(&self) -> &EnvSpec {
        self
    }

    fn step(&self, state: &EnvState, action: &[f64]) -> Result<Transition> {
        let next_state = self.rk4_step(state, action)?;
        let observation = self.observe(&next_state);
        let reward = self.task_reward(state, action);
        Ok(Transition {
            next_state,
            observation,
            reward,
            task_reward: reward,
        })
    }
}

impl EnvSpec {
    pub fn pendulum(reward_variant: RewardVariant) -> Self {
        pendulum::spec(reward_variant)
    }

    pub fn cartpole(reward_variant: RewardVariant) -> Self {
        cartpole::spec(reward_variant)
    }

    pub fn two_link(reward_variant: RewardVariant) -> Self {
        two_link::spec(reward_variant)
    }

    pub fn by_name(name: &str, reward_variant: RewardVariant) -> Result<Self> {
        match name {
            "pendulum" => Ok(Self::pendulum(reward_variant)),
            "cartpole" => Ok(Self::cartpole(reward_variant)),
            "two_link" => Ok(Self::two_link(reward_variant)),
            other => Err(Error::InvalidConfig(format!(
                "unknown environment `{other}` (expected pendulum, cartpole or two_link)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            EnvKind::Pendulum(_) => "pendulum",
            EnvKind::Cartpole(_) => "cartpole",
            EnvKind::TwoLink(_) => "two_link",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self.kind {
            EnvKind::Pendulum(_) => 2,
            EnvKind::Cartpole(_) => 4,
            EnvKind::TwoLink(_) => 4,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self.kind {
            EnvKind::Pendulum(_) => 3,
            EnvKind::Cartpole(_) => 5,
            EnvKind::TwoLink(_) => 6,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.action_bounds.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dt <= 0.0 {
            return Err(Error::InvalidConfig(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.episode_cap == 0 {
            return Err(Error::InvalidConfig("episode cap must be >= 1".into()));
        }
        if self.action_bounds.iter().any(|b| *b <= 0.0) {
            return Err(Error::InvalidConfig("action bounds must be positive".into()));
        }
        if self.init_center.len() != self.state_dim()
            || self.init_half_width.len() != self.state_dim()
        {
            return Err(Error::InvalidConfig(
                "initial-state box must match the state dimension".into(),
            ));
        }
        if self.init_half_width.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidConfig(
                "initial-state half-widths must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Sample an initial state uniformly from the declared box.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        let coords = self
            .init_center
            .iter()
            .zip(&self.init_half_width)
            .map(|(&c, &hw)| {
                if hw > 0.0 {
                    c + rng.random_range(-hw..=hw)
                } else {
                    c
                }
            })
            .collect();
        EnvState::new(coords)
    }

    /// Time derivative of the state under the environment ODE.
    pub fn derivative(&self, coords: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        if coords.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "derivative state",
                expected: self.state_dim(),
                got: coords.len(),
            });
        }
        if action.len() != self.action_dim() {
            return Err(Error::DimensionMismatch {
                context: "derivative action",
                expected: self.action_dim(),
                got: action.len(),
            });
        }
        if coords.iter().chain(action.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("derivative inputs".into()));
        }
        Ok(match &self.kind {
            EnvKind::Pendulum(p) => pendulum::derivative(p, coords, action[0]),
            EnvKind::Cartpole(p) => cartpole::derivative(p, coords, action[0]),
            EnvKind::TwoLink(p) => two_link::derivative(p, coords, action),
        })
    }

    /// Clamp an action to the declared bounds, component-wise.
    pub fn clamp_action(&self, action: &[f64]) -> ControlAction {
        action
            .iter()
            .zip(&self.action_bounds)
            .map(|(&a, &b)| a.clamp(-b, b))
            .collect()
    }

    /// One classical fourth-order Runge-Kutta step over `dt` with the
    /// (clamped) action held constant. Raw angles stay unwrapped.
    pub fn rk4_step(&self, state: &EnvState, action: &[f64]) -> Result<EnvState> {
        let u = self.clamp_action(action);
        let s = &state.coords;
        let h = self.dt;

        let k1 = self.derivative(s, &u)?;
        let s2: Vec<f64> = s.iter().zip(&k1).map(|(x, k)| x + 0.5 * h * k).collect();
        let k2 = self.derivative(&s2, &u)?;
        let s3: Vec<f64> = s.iter().zip(&k2).map(|(x, k)| x + 0.5 * h * k).collect();
        let k3 = self.derivative(&s3, &u)?;
        let s4: Vec<f64> = s.iter().zip(&k3).map(|(x, k)| x + h * k).collect();
        let k4 = self.derivative(&s4, &u)?;

        let coords: Vec<f64> = (0..s.len())
            .map(|i| s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Diverged {
                step: state.step_index,
            });
        }
        Ok(EnvState {
            coords,
            step_index: state.step_index + 1,
        })
    }

    /// Observation map: angles as (sin, cos) pairs, velocities and cart
    /// position passed through.
    pub fn observe(&self, state: &EnvState) -> Observation {
        match &self.kind {
            EnvKind::Pendulum(_) => pendulum::observe(&state.coords),
            EnvKind::Cartpole(_) => cartpole::observe(&state.coords),
            EnvKind::TwoLink(_) => two_link::observe(&state.coords),
        }
    }

    /// Task reward in `[0, 1]`: an exponential kernel of the squared scaled
    /// distance to the target configuration. The `Underspecified` variant
    /// evaluates only the designated subset of dimensions and is exactly
    /// invariant to the rest.
    pub fn task_reward(&self, state: &EnvState, action: &[f64]) -> f64 {
        let u = self.clamp_action(action);
        match &self.kind {
            EnvKind::Pendulum(p) => {
                pendulum::task_reward(p, self.reward_variant, &state.coords, u[0])
            }
            EnvKind::Cartpole(p) => {
                cartpole::task_reward(p, self.reward_variant, &state.coords, u[0])
            }
            EnvKind::TwoLink(p) => {
                two_link::task_reward(p, self.reward_variant, &state.coords, &u)
            }
        }
    }
}

/// Wrap an angle into `(-pi, pi]`.
pub(crate) fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut a = theta % two_pi;
    if a > std::f64::consts::PI {
        a -= two_pi;
    } else if a <= -std::f64::consts::PI {
        a += two_pi;
    }
    a
}
