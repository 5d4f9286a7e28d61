//! Desk-scale learning check: PPO on the full-reward pendulum improves its
//! episodic return at least threefold from the first to the last tenth of
//! training.

use gift_core::env::{EnvSpec, RewardVariant};
use gift_core::normalize::ObsNormalizer;
use gift_core::policy::{Policy, ValueFn};
use gift_core::rng::sub_rng;
use gift_core::trainer::{train, PpoConfig};

#[test]
fn full_reward_pendulum_learns() {
    let env = EnvSpec::pendulum(RewardVariant::Full);
    let mut rng = sub_rng(4242, "train-test-init", 0);
    let mut policy = Policy::new(env.obs_dim(), env.action_bounds.clone(), &[64, 64], &mut rng);
    let mut value = ValueFn::new(env.obs_dim(), &[64, 64], &mut rng);
    let mut normalizer = ObsNormalizer::new(env.obs_dim());
    let cfg = PpoConfig {
        discount: 0.99,
        gae_lambda: 0.95,
        clip_ratio: 0.2,
        epochs: 10,
        minibatches: 8,
        entropy_cost: 1e-3,
        learning_rate: 3e-4,
        total_timesteps: 100_000,
        unroll_length: 64,
        num_envs: 16,
        reward_scaling: 1.0,
    };
    let report = train(&env, &mut policy, &mut value, &mut normalizer, &cfg, 7).unwrap();

    let rows = &report.rows;
    let tenth = (rows.len() / 10).max(1);
    // first tenth of iterations with completed episodes
    let first: Vec<f64> = rows
        .iter()
        .map(|r| r.mean_return)
        .filter(|m| *m > 0.0)
        .take(tenth)
        .collect();
    assert!(!first.is_empty(), "no completed episodes early in training");
    let first_mean = first.iter().sum::<f64>() / first.len() as f64;
    let last_mean =
        rows.iter().rev().take(tenth).map(|r| r.mean_return).sum::<f64>() / tenth as f64;
    assert!(
        last_mean >= 3.0 * first_mean,
        "return {first_mean:.2} -> {last_mean:.2} (needs 3x improvement)"
    );
}
