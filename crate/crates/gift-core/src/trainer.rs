//! On-policy PPO trainer.
//!
//! Used unchanged for both pipeline stages: pre-training maximizes the task
//! reward, fine-tuning maximizes whatever reward the wrapped environment
//! supplies. Rollouts come from a bank of parallel environment slots with
//! fixed per-slot rng streams, so results do not depend on how collection
//! is scheduled.

use std::collections::VecDeque;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvState, Mdp};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamState, Gradients};
use crate::normalize::ObsNormalizer;
use crate::policy::{Policy, ValueFn};
use crate::rng::sub_rng;

/// Coefficient on the value MSE term.
const VALUE_LOSS_COEF: f64 = 0.5;
/// Global gradient-norm ceiling, applied to policy and value separately.
const GRAD_CLIP_NORM: f64 = 0.5;
/// Completed-episode window for the reported mean return.
const RETURN_WINDOW: usize = 32;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    /// Discount factor, in `[0, 1)`.
    pub discount: f64,
    pub gae_lambda: f64,
    /// Clipped-surrogate band half-width, in `(0, 1)`.
    pub clip_ratio: f64,
    /// Passes over each collected batch.
    pub epochs: usize,
    pub minibatches: usize,
    pub entropy_cost: f64,
    pub learning_rate: f64,
    pub total_timesteps: usize,
    /// Steps collected per environment per iteration.
    pub unroll_length: usize,
    pub num_envs: usize,
    /// Multiplier on rewards entering the advantage computation; reported
    /// returns stay unscaled.
    pub reward_scaling: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            discount: 0.995,
            gae_lambda: 0.95,
            clip_ratio: 0.2,
            epochs: 16,
            minibatches: 32,
            entropy_cost: 1e-3,
            learning_rate: 1e-3,
            total_timesteps: 200_000,
            unroll_length: 30,
            num_envs: 16,
            reward_scaling: 1.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::InvalidConfig(format!(
                "discount must be in [0, 1), got {}",
                self.discount
            )));
        }
        if !(0.0 < self.clip_ratio && self.clip_ratio < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "clip ratio must be in (0, 1), got {}",
                self.clip_ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::InvalidConfig(format!(
                "gae lambda must be in [0, 1], got {}",
                self.gae_lambda
            )));
        }
        if self.epochs == 0
            || self.minibatches == 0
            || self.unroll_length == 0
            || self.num_envs == 0
        {
            return Err(Error::InvalidConfig(
                "epochs, minibatches, unroll length and env count must be >= 1".into(),
            ));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if !self.reward_scaling.is_finite() {
            return Err(Error::InvalidConfig("reward scaling must be finite".into()));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.num_envs * self.unroll_length
    }
}

/// On-policy samples from one collection pass; index layout is
/// `t * num_envs + e`. Observations are stored in the normalized space the
/// networks consume.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    pub num_envs: usize,
    pub unroll_length: usize,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    /// Scaled by `reward_scaling`; what the advantage estimator sees.
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub log_probs: Vec<f64>,
    /// Episode ended after this step (the slot was reset before the next).
    pub dones: Vec<bool>,
    /// Episode ended by divergence rather than the step cap; no bootstrap.
    pub terminals: Vec<bool>,
    /// Value of the episode-final observation at truncation boundaries.
    pub boundary_values: Vec<f64>,
    /// Normalized observation each slot was left at, for bootstrapping.
    pub final_observations: Vec<Vec<f64>>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.num_envs * self.unroll_length
    }
}

/// A persistent environment slot: state plus its private rng stream.
struct EnvSlot {
    state: EnvState,
    rng: ChaCha8Rng,
    episode_return: f64,
    episode_task_return: f64,
}

/// Bank of parallel environments that persists across collection passes.
pub struct RolloutState {
    slots: Vec<EnvSlot>,
    /// Returns of episodes completed during the most recent collection.
    completed_returns: Vec<f64>,
    completed_task_returns: Vec<f64>,
}

impl RolloutState {
    pub fn new<M: Mdp>(mdp: &M, num_envs: usize, seed: u64) -> Self {
        let slots = (0..num_envs)
            .map(|e| {
                let mut rng = sub_rng(seed, "env-slot", e as u64);
                let state = mdp.reset(&mut rng);
                EnvSlot {
                    state,
                    rng,
                    episode_return: 0.0,
                    episode_task_return: 0.0,
                }
            })
            .collect();
        RolloutState {
            slots,
            completed_returns: Vec::new(),
            completed_task_returns: Vec::new(),
        }
    }
}

/// Fill a buffer with `unroll_length` on-policy steps from every slot.
/// Slots auto-reset when an episode hits its cap or diverges.
pub fn collect_rollouts<M: Mdp>(
    mdp: &M,
    policy: &Policy,
    value: &ValueFn,
    normalizer: &mut ObsNormalizer,
    cfg: &PpoConfig,
    state: &mut RolloutState,
) -> Result<RolloutBuffer> {
    let n = cfg.num_envs;
    assert_eq!(
        state.slots.len(),
        n,
        "rollout state sized for a different env count"
    );
    let capacity = cfg.batch_size();
    let mut buf = RolloutBuffer {
        num_envs: n,
        unroll_length: cfg.unroll_length,
        observations: Vec::with_capacity(capacity),
        actions: Vec::with_capacity(capacity),
        rewards: Vec::with_capacity(capacity),
        values: Vec::with_capacity(capacity),
        log_probs: Vec::with_capacity(capacity),
        dones: Vec::with_capacity(capacity),
        terminals: Vec::with_capacity(capacity),
        boundary_values: Vec::with_capacity(capacity),
        final_observations: Vec::new(),
    };
    state.completed_returns.clear();
    state.completed_task_returns.clear();

    let cap = mdp.spec().episode_cap;
    for _ in 0..cfg.unroll_length {
        for slot in state.slots.iter_mut() {
            let raw_obs = mdp.observe(&slot.state);
            let obs = normalizer.normalize(&raw_obs);
            normalizer.update(&raw_obs);

            let (action, log_prob) = policy.act_stochastic(&obs, &mut slot.rng)?;
            let v = value.value(&obs)?;

            let (reward, task_reward, done, terminal, boundary_value) =
                match mdp.step(&slot.state, &action) {
                    Ok(tr) => {
                        let truncated = tr.next_state.step_index >= cap;
                        let bv = if truncated {
                            value.value(&normalizer.normalize(&tr.observation))?
                        } else {
                            0.0
                        };
                        slot.state = tr.next_state;
                        (tr.reward, tr.task_reward, truncated, false, bv)
                    }
                    Err(Error::Diverged { .. }) | Err(Error::NonFinite(_)) => {
                        // divergence terminates the episode; training continues
                        (0.0, 0.0, true, true, 0.0)
                    }
                    Err(e) => return Err(e),
                };

            slot.episode_return += reward;
            slot.episode_task_return += task_reward;
            if done {
                state.completed_returns.push(slot.episode_return);
                state.completed_task_returns.push(slot.episode_task_return);
                slot.episode_return = 0.0;
                slot.episode_task_return = 0.0;
                slot.state = mdp.reset(&mut slot.rng);
            }

            buf.observations.push(obs);
            buf.actions.push(action);
            buf.rewards.push(reward * cfg.reward_scaling);
            buf.values.push(v);
            buf.log_probs.push(log_prob);
            buf.dones.push(done);
            buf.terminals.push(terminal);
            buf.boundary_values.push(boundary_value);
        }
    }

    buf.final_observations = state
        .slots
        .iter()
        .map(|slot| normalizer.normalize(&mdp.observe(&slot.state)))
        .collect();
    debug_assert!(buf.is_full());
    Ok(buf)
}

/// Generalized advantage estimation with episode-boundary masking.
///
/// Returns raw (unnormalized) advantages and the value-regression targets;
/// [`normalize_advantages`] standardizes a batch in place.
pub fn compute_gae(
    buffer: &RolloutBuffer,
    discount: f64,
    gae_lambda: f64,
    bootstrap_values: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let n = buffer.num_envs;
    let t_max = buffer.unroll_length;
    assert_eq!(bootstrap_values.len(), n);
    assert!(buffer.is_full(), "advantage computation needs a full buffer");

    let mut advantages = vec![0.0; buffer.len()];
    let mut returns = vec![0.0; buffer.len()];
    for e in 0..n {
        let mut next_advantage = 0.0;
        for t in (0..t_max).rev() {
            let idx = t * n + e;
            let (next_value, flow) = if buffer.dones[idx] {
                let v = if buffer.terminals[idx] {
                    0.0
                } else {
                    buffer.boundary_values[idx]
                };
                (v, 0.0)
            } else if t + 1 == t_max {
                (bootstrap_values[e], 1.0)
            } else {
                (buffer.values[idx + n], 1.0)
            };
            let delta = buffer.rewards[idx] + discount * next_value - buffer.values[idx];
            next_advantage = delta + discount * gae_lambda * flow * next_advantage;
            advantages[idx] = next_advantage;
            returns[idx] = next_advantage + buffer.values[idx];
        }
    }
    (advantages, returns)
}

/// Standardize to mean 0, std 1 (population std, epsilon-guarded).
pub fn normalize_advantages(advantages: &mut [f64]) {
    if advantages.is_empty() {
        return;
    }
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages
        .iter()
        .map(|a| (a - mean) * (a - mean))
        .sum::<f64>()
        / n;
    let std = var.sqrt().max(1e-8);
    for a in advantages.iter_mut() {
        *a = (*a - mean) / std;
    }
}

/// Clipped-surrogate contribution of one sample: returns the loss term and
/// the coefficient of `d log_prob` in its gradient.
pub(crate) fn surrogate(ratio: f64, advantage: f64, clip: f64) -> (f64, f64) {
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    let unclipped_obj = ratio * advantage;
    let clipped_obj = clipped * advantage;
    if unclipped_obj <= clipped_obj {
        (-unclipped_obj, -unclipped_obj)
    } else {
        (-clipped_obj, 0.0)
    }
}

/// Losses averaged over all minibatch updates in one [`ppo_update`] call.
#[derive(Debug, Clone, Copy)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub skipped_minibatches: usize,
}

/// Clipped-ratio policy loss + value MSE + entropy bonus, minibatched over
/// epochs; gradient norm clipped at 0.5. Non-finite minibatch losses are
/// skipped with a diagnostic and training continues.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update(
    policy: &mut Policy,
    value: &mut ValueFn,
    buffer: &RolloutBuffer,
    advantages: &[f64],
    returns: &[f64],
    cfg: &PpoConfig,
    policy_opt: &mut AdamState,
    value_opt: &mut AdamState,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    let total = buffer.len();
    assert_eq!(advantages.len(), total);
    assert_eq!(returns.len(), total);

    let mut adv = advantages.to_vec();
    normalize_advantages(&mut adv);

    let mut indices: Vec<usize> = (0..total).collect();
    let chunk = total.div_ceil(cfg.minibatches);
    let mut stats = UpdateStats {
        policy_loss: 0.0,
        value_loss: 0.0,
        entropy: 0.0,
        skipped_minibatches: 0,
    };
    let mut updates = 0usize;

    for _ in 0..cfg.epochs {
        indices.shuffle(rng);
        for batch in indices.chunks(chunk) {
            let m = batch.len() as f64;
            let mut net_grads = Gradients::zeros_like(&policy.mean_net);
            let mut log_std_grads = vec![0.0; policy.action_dim()];
            let mut value_grads = Gradients::zeros_like(&value.net);
            let mut policy_loss = 0.0;
            let mut value_loss = 0.0;

            for &i in batch {
                let obs = &buffer.observations[i];
                let mean = policy.mean(obs)?;
                let new_log_prob = policy.log_prob_given_mean(&mean, &buffer.actions[i]);
                let ratio = (new_log_prob - buffer.log_probs[i]).exp();
                let (loss_i, dlogp_coef) = surrogate(ratio, adv[i], cfg.clip_ratio);
                policy_loss += loss_i / m;

                if dlogp_coef != 0.0 {
                    let (d_mean, d_log_std) = policy.log_prob_grads(&mean, &buffer.actions[i]);
                    let out_grad: Vec<f64> = d_mean.iter().map(|g| g * dlogp_coef / m).collect();
                    let sample = policy.mean_net.backward(obs, &out_grad)?;
                    net_grads.add_scaled(&sample, 1.0);
                    for (acc, g) in log_std_grads.iter_mut().zip(&d_log_std) {
                        *acc += g * dlogp_coef / m;
                    }
                }

                let v = value.value(obs)?;
                let err = v - returns[i];
                value_loss += VALUE_LOSS_COEF * err * err / m;
                let sample = value.net.backward(obs, &[VALUE_LOSS_COEF * 2.0 * err / m])?;
                value_grads.add_scaled(&sample, 1.0);
            }

            // entropy bonus: the Gaussian is state-independent, so its
            // gradient is a constant -entropy_cost per log-std entry
            let entropy = policy.entropy();
            for g in log_std_grads.iter_mut() {
                *g -= cfg.entropy_cost;
            }
            let total_loss = policy_loss + value_loss - cfg.entropy_cost * entropy;
            if !total_loss.is_finite() {
                log::warn!("skipping minibatch with non-finite loss {total_loss}");
                stats.skipped_minibatches += 1;
                continue;
            }

            clip_policy_grads(&mut net_grads, &mut log_std_grads);
            let vnorm = value_grads.l2_norm();
            if vnorm > GRAD_CLIP_NORM {
                value_grads.scale(GRAD_CLIP_NORM / vnorm);
            }

            policy_opt.step_zipped(
                policy.mean_net.params_mut().chain(policy.log_std.iter_mut()),
                net_grads.values().chain(log_std_grads.iter().copied()),
            )?;
            policy.clamp_log_std();
            adam_step(value_opt, &mut value.net, &value_grads)?;

            stats.policy_loss += policy_loss;
            stats.value_loss += value_loss;
            stats.entropy += entropy;
            updates += 1;
        }
    }

    if updates > 0 {
        stats.policy_loss /= updates as f64;
        stats.value_loss /= updates as f64;
        stats.entropy /= updates as f64;
    }
    Ok(stats)
}

fn clip_policy_grads(net: &mut Gradients, log_std: &mut [f64]) {
    let sq: f64 =
        net.values().map(|g| g * g).sum::<f64>() + log_std.iter().map(|g| g * g).sum::<f64>();
    let norm = sq.sqrt();
    if norm > GRAD_CLIP_NORM {
        let s = GRAD_CLIP_NORM / norm;
        net.scale(s);
        log_std.iter_mut().for_each(|g| *g *= s);
    }
}

/// One row per update iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRow {
    pub iteration: usize,
    pub timesteps: usize,
    /// Mean return over a window of recently completed episodes, in the
    /// reward the learner optimizes (task or intrinsic), unscaled.
    pub mean_return: f64,
    /// Same window, task-reward side channel (equals `mean_return` when
    /// training directly on the task reward).
    pub mean_task_return: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub wallclock_s: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub rows: Vec<TrainRow>,
}

impl TrainReport {
    /// Fixed-header CSV:
    /// `iter,timesteps,mean_return,policy_loss,value_loss,entropy,wallclock_s`.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("iter,timesteps,mean_return,policy_loss,value_loss,entropy,wallclock_s\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.3}\n",
                r.iteration,
                r.timesteps,
                r.mean_return,
                r.policy_loss,
                r.value_loss,
                r.entropy,
                r.wallclock_s
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Run the collect/update loop until `total_timesteps` environment steps.
/// The policy, value function and normalizer are updated in place.
pub fn train<M: Mdp>(
    mdp: &M,
    policy: &mut Policy,
    value: &mut ValueFn,
    normalizer: &mut ObsNormalizer,
    cfg: &PpoConfig,
    seed: u64,
) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut rollout_state = RolloutState::new(mdp, cfg.num_envs, seed);
    let mut shuffle_rng = sub_rng(seed, "minibatch-shuffle", 0);
    let mut policy_opt = AdamState::new(
        policy.mean_net.param_count() + policy.action_dim(),
        cfg.learning_rate,
    );
    let mut value_opt = AdamState::new(value.net.param_count(), cfg.learning_rate);

    let mut report = TrainReport::default();
    let mut window: VecDeque<(f64, f64)> = VecDeque::with_capacity(RETURN_WINDOW);
    let mut timesteps = 0usize;
    let mut iteration = 0usize;

    while timesteps < cfg.total_timesteps {
        let buffer = collect_rollouts(mdp, policy, value, normalizer, cfg, &mut rollout_state)?;
        timesteps += buffer.len();
        iteration += 1;

        for (r, t) in rollout_state
            .completed_returns
            .iter()
            .zip(&rollout_state.completed_task_returns)
        {
            if window.len() == RETURN_WINDOW {
                window.pop_front();
            }
            window.push_back((*r, *t));
        }

        let bootstrap: Vec<f64> = buffer
            .final_observations
            .iter()
            .map(|o| value.value(o))
            .collect::<Result<_>>()?;
        let (advantages, returns) = compute_gae(&buffer, cfg.discount, cfg.gae_lambda, &bootstrap);
        let stats = ppo_update(
            policy,
            value,
            &buffer,
            &advantages,
            &returns,
            cfg,
            &mut policy_opt,
            &mut value_opt,
            &mut shuffle_rng,
        )?;

        let (mean_return, mean_task) = if window.is_empty() {
            (0.0, 0.0)
        } else {
            let n = window.len() as f64;
            (
                window.iter().map(|(r, _)| r).sum::<f64>() / n,
                window.iter().map(|(_, t)| t).sum::<f64>() / n,
            )
        };
        report.rows.push(TrainRow {
            iteration,
            timesteps,
            mean_return,
            mean_task_return: mean_task,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            wallclock_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(report)
}
