//! Gaussian MLP policy with a tanh-squashed mean and a state-independent
//! log standard deviation, plus the scalar value network.
//!
//! The deterministic mode (`act_deterministic`) is what reference
//! generation and stability estimation drive; it is smooth in the
//! observation so the closed-loop map has well-defined Jacobians.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mlp;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Numerical guard when inverting the squash at the action bounds.
const SQUASH_EPS: f64 = 1e-12;

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Policy {
    pub mean_net: Mlp,
    /// One entry per action dimension, clamped to `[-5, 2]`.
    pub log_std: Vec<f64>,
    /// Per-dimension action half-widths (the tanh output is scaled by these).
    pub action_bounds: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueFn {
    pub net: Mlp,
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        action_bounds: Vec<f64>,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(action_bounds.len());
        Policy {
            // small output gain keeps initial actions near zero
            mean_net: Mlp::new(&dims, 0.01, rng),
            log_std: vec![-0.5; action_bounds.len()],
            action_bounds,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.action_bounds.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.mean_net.validate()?;
        if self.mean_net.output_dim() != self.action_bounds.len() {
            return Err(Error::DimensionMismatch {
                context: "policy output width",
                expected: self.action_bounds.len(),
                got: self.mean_net.output_dim(),
            });
        }
        if self.log_std.len() != self.action_bounds.len() {
            return Err(Error::DimensionMismatch {
                context: "policy log-std width",
                expected: self.action_bounds.len(),
                got: self.log_std.len(),
            });
        }
        if self
            .log_std
            .iter()
            .any(|l| !(LOG_STD_MIN..=LOG_STD_MAX).contains(l))
        {
            return Err(Error::InvalidConfig("log-std out of [-5, 2]".into()));
        }
        Ok(())
    }

    pub fn clamp_log_std(&mut self) {
        for l in &mut self.log_std {
            *l = l.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    /// Pre-squash mean of the action distribution.
    pub fn mean(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.mean_net.forward(obs)
    }

    /// `bounds * tanh(mean_net(obs))`; always within bounds, smooth in obs.
    pub fn act_deterministic(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let mean = self.mean(obs)?;
        Ok(mean
            .iter()
            .zip(&self.action_bounds)
            .map(|(m, b)| b * m.tanh())
            .collect())
    }

    /// Sample around the pre-squash mean, squash and clamp. The returned
    /// log-probability is computed through [`Policy::log_prob_of`]'s code
    /// path, so the two always agree.
    pub fn act_stochastic<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        rng: &mut R,
    ) -> Result<(Vec<f64>, f64)> {
        let mean = self.mean(obs)?;
        let mut action = Vec::with_capacity(mean.len());
        for ((m, ls), b) in mean.iter().zip(&self.log_std).zip(&self.action_bounds) {
            let eps: f64 = rng.sample(StandardNormal);
            let z = m + ls.exp() * eps;
            action.push((b * z.tanh()).clamp(-b, *b));
        }
        let log_prob = self.log_prob_given_mean(&mean, &action);
        Ok((action, log_prob))
    }

    /// Gaussian log-density of the pre-squash value with the tanh
    /// change-of-variables correction. Actions exactly at a bound go through
    /// a clamped inverse with an epsilon guard.
    pub fn log_prob_of(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        if action.len() != self.action_dim() {
            return Err(Error::DimensionMismatch {
                context: "log_prob action width",
                expected: self.action_dim(),
                got: action.len(),
            });
        }
        let mean = self.mean(obs)?;
        Ok(self.log_prob_given_mean(&mean, action))
    }

    /// Shared density computation used by both sampling and evaluation.
    pub(crate) fn log_prob_given_mean(&self, mean: &[f64], action: &[f64]) -> f64 {
        let mut lp = 0.0;
        for i in 0..action.len() {
            let b = self.action_bounds[i];
            let t = (action[i] / b).clamp(-1.0 + SQUASH_EPS, 1.0 - SQUASH_EPS);
            let z = t.atanh();
            let sigma = self.log_std[i].exp();
            let d = (z - mean[i]) / sigma;
            lp += -0.5 * d * d - self.log_std[i] - 0.5 * LN_2PI;
            lp -= (b * (1.0 - t * t)).ln();
        }
        lp
    }

    /// Gradients of the log-density at a fixed action with respect to the
    /// pre-squash mean and the log-std entries. The squash correction does
    /// not depend on the parameters, so it drops out.
    pub(crate) fn log_prob_grads(&self, mean: &[f64], action: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut d_mean = Vec::with_capacity(action.len());
        let mut d_log_std = Vec::with_capacity(action.len());
        for i in 0..action.len() {
            let b = self.action_bounds[i];
            let t = (action[i] / b).clamp(-1.0 + SQUASH_EPS, 1.0 - SQUASH_EPS);
            let z = t.atanh();
            let sigma = self.log_std[i].exp();
            let d = (z - mean[i]) / sigma;
            d_mean.push(d / sigma);
            d_log_std.push(d * d - 1.0);
        }
        (d_mean, d_log_std)
    }

    /// Entropy of the pre-squash Gaussian (the exploration regularizer).
    pub fn entropy(&self) -> f64 {
        self.log_std
            .iter()
            .map(|ls| ls + 0.5 * (LN_2PI + 1.0))
            .sum()
    }
}

impl ValueFn {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        ValueFn {
            net: Mlp::new(&dims, 1.0, rng),
        }
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.net.forward(obs)?[0])
    }
}
