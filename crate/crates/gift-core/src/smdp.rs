//! The stabilising wrapper: reference-trajectory generation, the
//! target-observation lookup, the intrinsic reward, and an [`Mdp`]
//! implementation that swaps the task reward for the intrinsic one while
//! leaving dynamics, observations and actions untouched.
//!
//! The intrinsic reward of a transition `(o_t, o_next)` is
//! `1 / ((kappa * ||o_next - tau(o_t)||)^2 + 1)`, where the target
//! `tau(o_t)` is the immediate successor of the reference point nearest to
//! `o_t`. Distances are measured on observations normalized by the frozen
//! pre-training statistics so heterogeneous units share one metric.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{EnvSpec, EnvState, Mdp, Observation, Transition};
use crate::error::{Error, Result};
use crate::normalize::ObsNormalizer;
use crate::policy::{Policy, ValueFn};
use crate::rng::sub_rng;
use crate::trainer::{train, PpoConfig, TrainReport};

/// Default decay scale for the intrinsic reward kernel.
pub fn default_kappa() -> f64 {
    (17.0f64 / 3.0).sqrt()
}

/// What to do when the nearest reference point is the final one, so that
/// "its successor" would fall off the end of the trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverflowPolicy {
    /// Clamp the successor index: the final observation is its own target,
    /// anchoring the end of the episode.
    ClampToLast,
    /// Exclude the final point from the nearest-neighbor search so the
    /// target is always a true successor.
    HoldLastTarget,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GiftRewardConfig {
    pub kappa: f64,
    pub overflow: OverflowPolicy,
}

impl Default for GiftRewardConfig {
    fn default() -> Self {
        GiftRewardConfig {
            kappa: default_kappa(),
            overflow: OverflowPolicy::ClampToLast,
        }
    }
}

impl GiftRewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "kappa must be positive, got {}",
                self.kappa
            )));
        }
        Ok(())
    }
}

/// The stabilisation target: the observation sequence of the best rollout
/// among the generated candidates, plus generation metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    /// Raw (unnormalized) observations, length L, width k.
    pub observations: Vec<Observation>,
    /// Total task reward of the source rollout; the max over candidates.
    pub total_reward: f64,
    /// Number of candidate rollouts the selection saw.
    pub num_candidates: usize,
    pub seed: u64,
}

impl ReferenceTrajectory {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.observations.first().map_or(0, Vec::len)
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the trajectory point nearest to `obs`; ties break to the
/// smallest index. `limit` restricts the search to `trajectory[..limit]`.
fn nearest_index(trajectory: &[Observation], obs: &[f64], limit: usize) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (l, point) in trajectory[..limit].iter().enumerate() {
        let d = squared_distance(point, obs);
        if d < best_d {
            best_d = d;
            best = l;
        }
    }
    best
}

/// Index into the trajectory of the target observation for `obs`: the
/// successor of the nearest point, subject to the overflow policy.
pub fn target_index(trajectory: &[Observation], obs: &[f64], cfg: &GiftRewardConfig) -> usize {
    let len = trajectory.len();
    debug_assert!(len >= 2, "reference trajectory needs at least two points");
    match cfg.overflow {
        OverflowPolicy::ClampToLast => (nearest_index(trajectory, obs, len) + 1).min(len - 1),
        OverflowPolicy::HoldLastTarget => nearest_index(trajectory, obs, len - 1) + 1,
    }
}

/// The target observation itself.
pub fn target_observation<'a>(
    trajectory: &'a [Observation],
    obs: &[f64],
    cfg: &GiftRewardConfig,
) -> &'a Observation {
    &trajectory[target_index(trajectory, obs, cfg)]
}

/// Intrinsic reward of the transition `(obs, next_obs)` against the
/// trajectory: in `(0, 1]`, equal to 1 exactly at zero distance, strictly
/// decreasing in the distance to the target.
pub fn gift_reward(
    trajectory: &[Observation],
    obs: &[f64],
    next_obs: &[f64],
    cfg: &GiftRewardConfig,
) -> f64 {
    let target = target_observation(trajectory, obs, cfg);
    let dist = squared_distance(target, next_obs).sqrt();
    let scaled = cfg.kappa * dist;
    1.0 / (scaled * scaled + 1.0)
}

/// Result of rolling the deterministic policy from one initial state.
#[derive(Debug, Clone)]
pub struct DeterministicRollout {
    /// Observations `o_0 ..= o_T` (raw space); shorter if diverged.
    pub observations: Vec<Observation>,
    pub actions: Vec<Vec<f64>>,
    /// Task reward accumulated up to divergence or the step budget.
    pub total_task_reward: f64,
    pub diverged_at: Option<usize>,
}

/// Roll the deterministic policy for `steps` steps from `initial`,
/// recording raw observations, actions and the total task reward.
pub fn rollout_deterministic<M: Mdp>(
    mdp: &M,
    policy: &Policy,
    normalizer: &ObsNormalizer,
    initial: EnvState,
    steps: usize,
) -> Result<DeterministicRollout> {
    let mut state = initial;
    let mut observations = vec![mdp.observe(&state)];
    let mut actions = Vec::with_capacity(steps);
    let mut total = 0.0;
    let mut diverged_at = None;
    for t in 0..steps {
        let obs = normalizer.normalize(observations.last().unwrap());
        let action = policy.act_deterministic(&obs)?;
        match mdp.step(&state, &action) {
            Ok(tr) => {
                total += tr.task_reward;
                observations.push(tr.observation);
                actions.push(action);
                state = tr.next_state;
            }
            Err(Error::Diverged { .. }) | Err(Error::NonFinite(_)) => {
                diverged_at = Some(t);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(DeterministicRollout {
        observations,
        actions,
        total_task_reward: total,
        diverged_at,
    })
}

/// Argmax with ties broken by the lowest index.
pub(crate) fn argmax_lowest_index(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Roll the deterministic policy from `num_candidates` fresh initial states
/// for `length` steps each and keep the observation trajectory with the
/// highest total task reward (ties to the lowest rollout index).
///
/// Candidates that diverge are discarded; if every one diverges this is a
/// hard error.
pub fn generate_reference(
    env: &EnvSpec,
    policy: &Policy,
    normalizer: &ObsNormalizer,
    num_candidates: usize,
    length: usize,
    seed: u64,
) -> Result<ReferenceTrajectory> {
    if num_candidates == 0 || length < 2 {
        return Err(Error::InvalidConfig(
            "reference generation needs N >= 1 and L >= 2".into(),
        ));
    }
    let mut rewards = Vec::with_capacity(num_candidates);
    let mut rollouts = Vec::with_capacity(num_candidates);
    for i in 0..num_candidates {
        let mut rng = sub_rng(seed, "reference-rollout", i as u64);
        let initial = env.reset(&mut rng);
        let rollout = rollout_deterministic(env, policy, normalizer, initial, length)?;
        rewards.push(if rollout.diverged_at.is_some() {
            f64::NEG_INFINITY
        } else {
            rollout.total_task_reward
        });
        rollouts.push(rollout);
    }
    let best = argmax_lowest_index(&rewards).expect("num_candidates >= 1");
    if rewards[best] == f64::NEG_INFINITY {
        return Err(Error::NoValidReference(num_candidates));
    }
    let chosen = &rollouts[best];
    Ok(ReferenceTrajectory {
        observations: chosen.observations[..length].to_vec(),
        total_reward: chosen.total_task_reward,
        num_candidates,
        seed,
    })
}

/// An environment wrapped so the trainer sees the intrinsic reward; the
/// task reward rides along as a side channel.
#[derive(Debug, Clone)]
pub struct SmdpSpec {
    pub env: EnvSpec,
    pub reference: ReferenceTrajectory,
    pub reward_config: GiftRewardConfig,
    /// Frozen statistics defining the distance metric.
    pub normalizer: ObsNormalizer,
    /// Reference observations pre-mapped into the normalized space.
    normalized_reference: Vec<Observation>,
}

/// Build the stabilising wrapper around `env`.
pub fn make_smdp(
    env: EnvSpec,
    reference: ReferenceTrajectory,
    reward_config: GiftRewardConfig,
    normalizer: ObsNormalizer,
) -> Result<SmdpSpec> {
    reward_config.validate()?;
    if reference.len() < 2 {
        return Err(Error::InvalidConfig(
            "reference trajectory needs at least two observations".into(),
        ));
    }
    if reference.obs_dim() != env.obs_dim() {
        return Err(Error::DimensionMismatch {
            context: "reference trajectory width",
            expected: env.obs_dim(),
            got: reference.obs_dim(),
        });
    }
    if normalizer.dim() != env.obs_dim() {
        return Err(Error::DimensionMismatch {
            context: "smdp normalizer width",
            expected: env.obs_dim(),
            got: normalizer.dim(),
        });
    }
    if !normalizer.is_frozen() {
        return Err(Error::InvalidConfig(
            "smdp distance metric requires frozen normalization statistics".into(),
        ));
    }
    let normalized_reference = reference
        .observations
        .iter()
        .map(|o| normalizer.normalize(o))
        .collect();
    Ok(SmdpSpec {
        env,
        reference,
        reward_config,
        normalizer,
        normalized_reference,
    })
}

impl SmdpSpec {
    /// Intrinsic reward for a raw observation transition.
    pub fn intrinsic_reward(&self, obs: &[f64], next_obs: &[f64]) -> f64 {
        gift_reward(
            &self.normalized_reference,
            &self.normalizer.normalize(obs),
            &self.normalizer.normalize(next_obs),
            &self.reward_config,
        )
    }
}

impl Mdp for SmdpSpec {
    fn spec(&self) -> &EnvSpec {
        &self.env
    }

    fn step(&self, state: &EnvState, action: &[f64]) -> Result<Transition> {
        let obs = self.env.observe(state);
        let mut tr = self.env.step(state, action)?;
        tr.reward = self.intrinsic_reward(&obs, &tr.observation);
        Ok(tr)
    }
}

/// Fine-tune an existing policy inside the stabilising wrapper. The
/// normalizer stays frozen; fresh optimizer state is created inside
/// [`train`].
pub fn gift_finetune(
    smdp: &SmdpSpec,
    policy: &mut Policy,
    value: &mut ValueFn,
    cfg: &PpoConfig,
    seed: u64,
) -> Result<TrainReport> {
    let mut normalizer = smdp.normalizer.clone();
    train(smdp, policy, value, &mut normalizer, cfg, seed)
}

const TRAJ_MAGIC: &[u8; 8] = b"GIFTTRAJ";
const TRAJ_VERSION: u32 = 1;

/// Persist a reference trajectory: an 8-byte magic, format version, the
/// header `(L, k, kappa, seed, total reward, candidate count)` and the
/// row-major `L x k` observation matrix, all little-endian.
pub fn save_reference(path: &Path, traj: &ReferenceTrajectory, kappa: f64) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    let k = traj.obs_dim();
    file.write_all(TRAJ_MAGIC)?;
    file.write_all(&TRAJ_VERSION.to_le_bytes())?;
    file.write_all(&(traj.len() as u64).to_le_bytes())?;
    file.write_all(&(k as u64).to_le_bytes())?;
    file.write_all(&kappa.to_le_bytes())?;
    file.write_all(&traj.seed.to_le_bytes())?;
    file.write_all(&traj.total_reward.to_le_bytes())?;
    file.write_all(&(traj.num_candidates as u64).to_le_bytes())?;
    for row in &traj.observations {
        debug_assert_eq!(row.len(), k);
        for v in row {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Load a reference trajectory written by [`save_reference`]; returns the
/// trajectory and the kappa recorded alongside it.
pub fn load_reference(path: &Path) -> Result<(ReferenceTrajectory, f64)> {
    let corrupt = |detail: &str| Error::CorruptArtifact {
        path: path.display().to_string(),
        detail: detail.to_string(),
    };
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)
        .map_err(|_| corrupt("file shorter than the magic"))?;
    if &magic != TRAJ_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let mut u32buf = [0u8; 4];
    file.read_exact(&mut u32buf)
        .map_err(|_| corrupt("missing version"))?;
    let version = u32::from_le_bytes(u32buf);
    if version != TRAJ_VERSION {
        return Err(Error::VersionMismatch {
            path: path.display().to_string(),
            found: version,
            expected: TRAJ_VERSION,
        });
    }
    let mut u64buf = [0u8; 8];
    let mut read_u64 = |file: &mut std::fs::File, what: &str| -> Result<u64> {
        file.read_exact(&mut u64buf).map_err(|_| corrupt(what))?;
        Ok(u64::from_le_bytes(u64buf))
    };
    let len = read_u64(&mut file, "missing length")? as usize;
    let k = read_u64(&mut file, "missing width")? as usize;
    let kappa = f64::from_bits(read_u64(&mut file, "missing kappa")?);
    let seed = read_u64(&mut file, "missing seed")?;
    let total_reward = f64::from_bits(read_u64(&mut file, "missing total reward")?);
    let num_candidates = read_u64(&mut file, "missing candidate count")? as usize;

    let mut data = vec![0u8; len * k * 8];
    file.read_exact(&mut data)
        .map_err(|_| corrupt("observation matrix truncated"))?;
    let mut trailing = [0u8; 1];
    if file.read(&mut trailing)? != 0 {
        return Err(corrupt("trailing bytes after observation matrix"));
    }
    let observations = (0..len)
        .map(|row| {
            (0..k)
                .map(|col| {
                    let off = (row * k + col) * 8;
                    f64::from_le_bytes(data[off..off + 8].try_into().unwrap())
                })
                .collect()
        })
        .collect();
    Ok((
        ReferenceTrajectory {
            observations,
            total_reward,
            num_candidates,
            seed,
        },
        kappa,
    ))
}
