//! Stabilising fine-tuning for continuous-control policies.
//!
//! The crate implements a three-stage pipeline on self-contained ODE
//! environments:
//!
//! 1. pre-train a Gaussian MLP policy with PPO on the task reward;
//! 2. roll the pre-trained deterministic policy from many initial states,
//!    keep the highest-reward observation trajectory as a reference, and
//!    wrap the environment so the reward becomes an inverse-quadratic
//!    kernel of the distance to the next reference point;
//! 3. fine-tune the same policy on that intrinsic reward.
//!
//! Stability of the resulting closed loop is quantified with Maximal
//! Lyapunov Exponent estimators (Jacobian and direct two-trajectory
//! methods) plus perturbation-fan rollouts.

pub mod checkpoint;
pub mod config;
pub mod env;
pub mod error;
pub mod nn;
pub mod normalize;
pub mod pipeline;
pub mod policy;
pub mod rng;
pub mod smdp;
pub mod stability;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};
