//! Experiment orchestration: the three-stage pipeline per seed, pooled
//! evaluation statistics, artifact layout and the metrics report.
//!
//! Per-seed artifacts live under `<out>/seed_<s>/`:
//! `checkpoint_<phase>.ckpt`, `reference.traj`, `train_<phase>.csv`,
//! `eval_<phase>.csv`, `mle_<phase>.csv`, `fan_<phase>.csv`. The pooled
//! `report.csv` sits at the output root. Each stage is exposed on its own
//! (the CLI subcommands call them directly) and is resumable from its
//! persisted artifact.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Phase};
use crate::config::{EvalConfig, ExperimentConfig};
use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::normalize::ObsNormalizer;
use crate::policy::{Policy, ValueFn};
use crate::rng::sub_rng;
use crate::smdp::{
    generate_reference, gift_finetune, load_reference, make_smdp, rollout_deterministic,
    save_reference, ReferenceTrajectory,
};
use crate::stability::{mle_batch, perturbation_fan, ClosedLoopMap, MleEstimate};
use crate::stats::{bootstrap_ci, iqm};
use crate::trainer::{train, TrainReport};

/// Reward and exponent samples for one (seed, phase) pair.
#[derive(Debug, Clone)]
pub struct SeedPhaseEval {
    pub seed: u64,
    pub phase: Phase,
    pub rewards: Vec<f64>,
    /// One entry per initial state; failures hold NaN.
    pub lambdas: Vec<f64>,
    pub mle_failures: usize,
    /// Max fan divergence at the final step, as a multiple of delta0.
    pub fan_final_over_initial: f64,
}

impl SeedPhaseEval {
    pub fn finite_lambdas(&self) -> Vec<f64> {
        self.lambdas
            .iter()
            .copied()
            .filter(|l| l.is_finite())
            .collect()
    }
}

/// One line of the pooled report; the structure mirrors a total-reward
/// table and an exponent table side by side.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub environment: String,
    pub phase: Phase,
    pub iqm_task_reward: f64,
    pub reward_ci: (f64, f64),
    pub iqm_mle: f64,
    pub mle_ci: (f64, f64),
    pub episodes: usize,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Default)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "environment,phase,iqm_task_reward,reward_ci_low,reward_ci_high,iqm_mle,mle_ci_low,mle_ci_high,episodes,seeds\n",
        );
        for r in &self.rows {
            let seeds = r
                .seeds
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(";");
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}\n",
                r.environment,
                r.phase,
                r.iqm_task_reward,
                r.reward_ci.0,
                r.reward_ci.1,
                r.iqm_mle,
                r.mle_ci.0,
                r.mle_ci.1,
                r.episodes,
                seeds
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Everything a finished (or resumed) pipeline run produces.
#[derive(Debug)]
pub struct PipelineOutcome {
    pub report: MetricsReport,
    pub evals: Vec<SeedPhaseEval>,
    /// Pre-training curves per seed, in seed order (empty rows if resumed).
    pub pretrain_reports: Vec<TrainReport>,
    /// Fine-tuning curves per seed, in seed order (empty rows if resumed).
    pub finetune_reports: Vec<TrainReport>,
}

/// Where one seed's artifacts live.
pub fn seed_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.out_dir.join(format!("seed_{seed}"))
}

fn checkpoint_path(cfg: &ExperimentConfig, seed: u64, phase: Phase) -> PathBuf {
    seed_dir(cfg, seed).join(format!("checkpoint_{phase}.ckpt"))
}

/// Load the checkpoint a later stage depends on, with a pointer at the
/// stage to run when it is missing.
pub fn load_stage_checkpoint(
    cfg: &ExperimentConfig,
    seed: u64,
    phase: Phase,
) -> Result<Checkpoint> {
    let path = checkpoint_path(cfg, seed, phase);
    if !path.exists() {
        return Err(Error::InvalidConfig(format!(
            "missing {} (run the earlier pipeline stage for seed {seed} first)",
            path.display()
        )));
    }
    load_checkpoint(&path, Some(phase))
}

/// Stage 1: pre-train the baseline policy on the task reward, freeze the
/// observation statistics, and persist the checkpoint plus training curve.
/// With `resume`, an existing checkpoint is loaded instead (empty report).
pub fn stage_pretrain(
    cfg: &ExperimentConfig,
    seed: u64,
    resume: bool,
) -> Result<(Checkpoint, TrainReport)> {
    let env = cfg.env_spec()?;
    let dir = seed_dir(cfg, seed);
    std::fs::create_dir_all(&dir)?;
    let path = checkpoint_path(cfg, seed, Phase::Pretrained);
    if resume && path.exists() {
        log::info!("seed {seed}: resuming pre-trained checkpoint");
        return Ok((load_checkpoint(&path, Some(Phase::Pretrained))?, TrainReport::default()));
    }

    let mut rng = sub_rng(seed, "network-init", 0);
    let mut policy = Policy::new(
        env.obs_dim(),
        env.action_bounds.clone(),
        &cfg.hidden_sizes,
        &mut rng,
    );
    let mut value = ValueFn::new(env.obs_dim(), &cfg.hidden_sizes, &mut rng);
    let mut normalizer = ObsNormalizer::new(env.obs_dim());
    let report = train(&env, &mut policy, &mut value, &mut normalizer, &cfg.pretrain, seed)?;
    normalizer.freeze();
    report.write_csv(&dir.join("train_pretrained.csv"))?;
    let ckpt = Checkpoint::new(Phase::Pretrained, policy, value, normalizer, cfg.clone());
    save_checkpoint(&path, &ckpt)?;
    Ok((ckpt, report))
}

/// Stage 2a: roll the pre-trained deterministic policy from fresh initial
/// states and persist the best observation trajectory.
pub fn stage_reference(
    cfg: &ExperimentConfig,
    seed: u64,
    resume: bool,
) -> Result<ReferenceTrajectory> {
    let path = seed_dir(cfg, seed).join("reference.traj");
    if resume && path.exists() {
        log::info!("seed {seed}: resuming reference trajectory");
        return Ok(load_reference(&path)?.0);
    }
    let env = cfg.env_spec()?;
    let ckpt = load_stage_checkpoint(cfg, seed, Phase::Pretrained)?;
    let traj = generate_reference(
        &env,
        &ckpt.policy,
        &ckpt.normalizer,
        cfg.reference.num_rollouts,
        cfg.reference.length,
        seed,
    )?;
    save_reference(&path, &traj, cfg.gift.kappa)?;
    Ok(traj)
}

/// Stages 2b-3: wrap the environment with the intrinsic reward and
/// fine-tune the pre-trained policy in it.
pub fn stage_finetune(
    cfg: &ExperimentConfig,
    seed: u64,
    resume: bool,
) -> Result<(Checkpoint, TrainReport)> {
    let dir = seed_dir(cfg, seed);
    let path = checkpoint_path(cfg, seed, Phase::Gifted);
    if resume && path.exists() {
        log::info!("seed {seed}: resuming fine-tuned checkpoint");
        return Ok((load_checkpoint(&path, Some(Phase::Gifted))?, TrainReport::default()));
    }
    let env = cfg.env_spec()?;
    let ckpt = load_stage_checkpoint(cfg, seed, Phase::Pretrained)?;
    let reference = stage_reference(cfg, seed, true)?;
    let smdp = make_smdp(env, reference, cfg.gift.clone(), ckpt.normalizer.clone())?;

    let mut policy = ckpt.policy;
    let mut value = ckpt.value;
    let report = gift_finetune(&smdp, &mut policy, &mut value, &cfg.finetune, seed)?;
    report.write_csv(&dir.join("train_gifted.csv"))?;
    let gifted = Checkpoint::new(Phase::Gifted, policy, value, ckpt.normalizer, cfg.clone());
    save_checkpoint(&path, &gifted)?;
    Ok((gifted, report))
}

/// Deterministic-policy evaluation: `episodes` fresh initial states give
/// per-episode total task reward and a per-state Jacobian-method exponent.
/// Episodes that diverge contribute their reward to date; per-state
/// exponent failures are recorded in place.
pub fn evaluate(
    env: &EnvSpec,
    policy: &Policy,
    normalizer: &ObsNormalizer,
    eval: &EvalConfig,
    seed: u64,
) -> Result<(Vec<f64>, Vec<std::result::Result<MleEstimate, String>>)> {
    let initial_states: Vec<_> = (0..eval.episodes)
        .map(|i| {
            let mut rng = sub_rng(seed, "eval-reset", i as u64);
            env.reset(&mut rng)
        })
        .collect();

    let rewards: Vec<f64> = initial_states
        .par_iter()
        .map(|s0| {
            rollout_deterministic(env, policy, normalizer, s0.clone(), eval.episode_length)
                .map(|r| r.total_task_reward)
        })
        .collect::<Result<_>>()?;

    let map = ClosedLoopMap {
        env,
        policy,
        normalizer,
    };
    let coords: Vec<Vec<f64>> = initial_states.iter().map(|s| s.coords.clone()).collect();
    let estimates = mle_batch(
        &map,
        &coords,
        eval.mle_steps,
        eval.mle_transient,
        eval.mle_epsilon,
    );
    let estimates = estimates
        .into_iter()
        .map(|r| r.map_err(|e| e.to_string()))
        .collect();
    Ok((rewards, estimates))
}

/// Evaluate the checkpoint of `phase`: writes `eval_<phase>.csv` and
/// `mle_<phase>.csv` and returns the pooled samples (fan ratio unset).
pub fn stage_eval(cfg: &ExperimentConfig, seed: u64, phase: Phase) -> Result<SeedPhaseEval> {
    let env = cfg.env_spec()?;
    let ckpt = load_stage_checkpoint(cfg, seed, phase)?;
    let dir = seed_dir(cfg, seed);
    let (rewards, estimates) = evaluate(&env, &ckpt.policy, &ckpt.normalizer, &cfg.eval, seed)?;
    write_eval_csv(&dir.join(format!("eval_{phase}.csv")), &rewards)?;
    write_mle_csv(&dir.join(format!("mle_{phase}.csv")), &estimates)?;
    let mle_failures = estimates.iter().filter(|e| e.is_err()).count();
    let lambdas = estimates
        .iter()
        .map(|e| e.as_ref().map(|m| m.lambda).unwrap_or(f64::NAN))
        .collect();
    Ok(SeedPhaseEval {
        seed,
        phase,
        rewards,
        lambdas,
        mle_failures,
        fan_final_over_initial: 0.0,
    })
}

/// Only the exponent batch of [`stage_eval`]; writes `mle_<phase>.csv`.
pub fn stage_mle(
    cfg: &ExperimentConfig,
    seed: u64,
    phase: Phase,
) -> Result<Vec<std::result::Result<MleEstimate, String>>> {
    let env = cfg.env_spec()?;
    let ckpt = load_stage_checkpoint(cfg, seed, phase)?;
    let map = ClosedLoopMap {
        env: &env,
        policy: &ckpt.policy,
        normalizer: &ckpt.normalizer,
    };
    let coords: Vec<Vec<f64>> = (0..cfg.eval.episodes)
        .map(|i| {
            let mut rng = sub_rng(seed, "eval-reset", i as u64);
            env.reset(&mut rng).coords
        })
        .collect();
    let estimates: Vec<_> = mle_batch(
        &map,
        &coords,
        cfg.eval.mle_steps,
        cfg.eval.mle_transient,
        cfg.eval.mle_epsilon,
    )
    .into_iter()
    .map(|r| r.map_err(|e| e.to_string()))
    .collect();
    write_mle_csv(
        &seed_dir(cfg, seed).join(format!("mle_{phase}.csv")),
        &estimates,
    )?;
    Ok(estimates)
}

/// Perturbation-fan rollout for the checkpoint of `phase`: writes
/// `fan_<phase>.csv` and returns final max divergence over delta0.
pub fn stage_fan(cfg: &ExperimentConfig, seed: u64, phase: Phase) -> Result<f64> {
    let env = cfg.env_spec()?;
    let ckpt = load_stage_checkpoint(cfg, seed, phase)?;
    let map = ClosedLoopMap {
        env: &env,
        policy: &ckpt.policy,
        normalizer: &ckpt.normalizer,
    };
    let s0 = {
        let mut rng = sub_rng(seed, "fan-reset", 0);
        env.reset(&mut rng)
    };
    let mut fan_rng = sub_rng(seed, "fan-directions", 0);
    let fan = perturbation_fan(
        &map,
        &s0.coords,
        cfg.eval.fan_delta0,
        cfg.eval.fan_count,
        cfg.eval.fan_horizon,
        &mut fan_rng,
    );
    write_fan_csv(&seed_dir(cfg, seed).join(format!("fan_{phase}.csv")), &fan)?;
    if cfg.eval.fan_delta0 > 0.0 {
        Ok(fan.max_divergence(fan.horizon()) / cfg.eval.fan_delta0)
    } else {
        Ok(0.0)
    }
}

fn write_eval_csv(path: &Path, rewards: &[f64]) -> Result<()> {
    let mut out = String::from("episode,total_task_reward\n");
    for (i, r) in rewards.iter().enumerate() {
        out.push_str(&format!("{i},{r}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn write_mle_csv(
    path: &Path,
    estimates: &[std::result::Result<MleEstimate, String>],
) -> Result<()> {
    let mut out = String::from("state_index,lambda,method,steps,transient,epsilon\n");
    for (i, est) in estimates.iter().enumerate() {
        match est {
            Ok(e) => out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                i, e.lambda, e.method, e.steps, e.transient, e.epsilon
            )),
            Err(_) => out.push_str(&format!("{i},nan,jacobian,0,0,0\n")),
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn write_fan_csv(path: &Path, fan: &crate::stability::PerturbationFan) -> Result<()> {
    let mut out = String::from("trajectory_id,step,divergence_norm\n");
    for (p, divs) in fan.divergences.iter().enumerate() {
        for (t, d) in divs.iter().enumerate() {
            out.push_str(&format!("{p},{t},{d}\n"));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn run_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    resume: bool,
) -> Result<(Vec<SeedPhaseEval>, TrainReport, TrainReport)> {
    let (_ckpt, pretrain_report) =
        stage_pretrain(cfg, seed, resume).map_err(|e| e.phase("pretrain"))?;
    let mut pre_eval = stage_eval(cfg, seed, Phase::Pretrained)
        .map_err(|e| e.phase("evaluate-pretrained"))?;
    pre_eval.fan_final_over_initial = stage_fan(cfg, seed, Phase::Pretrained)
        .map_err(|e| e.phase("evaluate-pretrained"))?;

    stage_reference(cfg, seed, resume).map_err(|e| e.phase("reference"))?;
    let (_gifted, finetune_report) =
        stage_finetune(cfg, seed, resume).map_err(|e| e.phase("finetune"))?;

    let mut post_eval =
        stage_eval(cfg, seed, Phase::Gifted).map_err(|e| e.phase("evaluate-gifted"))?;
    post_eval.fan_final_over_initial =
        stage_fan(cfg, seed, Phase::Gifted).map_err(|e| e.phase("evaluate-gifted"))?;

    Ok((vec![pre_eval, post_eval], pretrain_report, finetune_report))
}

/// Pool per-seed samples and build one report row per phase.
pub fn build_report(cfg: &ExperimentConfig, evals: &[SeedPhaseEval]) -> Result<MetricsReport> {
    let mut report = MetricsReport::default();
    for phase in [Phase::Pretrained, Phase::Gifted] {
        let mut rewards = Vec::new();
        let mut lambdas = Vec::new();
        for e in evals.iter().filter(|e| e.phase == phase) {
            rewards.extend_from_slice(&e.rewards);
            lambdas.extend(e.finite_lambdas());
        }
        if rewards.is_empty() {
            continue;
        }
        let iqm_reward = iqm(&rewards)?;
        let mut rng = sub_rng(cfg.seeds[0], "bootstrap-reward", phase as u64);
        let reward_ci = bootstrap_ci(
            &rewards,
            |s| iqm(s).unwrap_or(f64::NAN),
            cfg.eval.bootstrap_resamples,
            cfg.eval.ci_level,
            &mut rng,
        )?;
        let iqm_mle = iqm(&lambdas)?;
        let mut rng = sub_rng(cfg.seeds[0], "bootstrap-mle", phase as u64);
        let mle_ci = bootstrap_ci(
            &lambdas,
            |s| iqm(s).unwrap_or(f64::NAN),
            cfg.eval.bootstrap_resamples,
            cfg.eval.ci_level,
            &mut rng,
        )?;
        report.rows.push(MetricsRow {
            environment: cfg.environment.clone(),
            phase,
            iqm_task_reward: iqm_reward,
            reward_ci,
            iqm_mle,
            mle_ci,
            episodes: rewards.len(),
            seeds: cfg.seeds.clone(),
        });
    }
    Ok(report)
}

/// Execute all stages for every seed and write the pooled report.
///
/// With `resume`, stages whose artifacts already exist under the output
/// directory are loaded instead of re-run.
pub fn run_pipeline(cfg: &ExperimentConfig, resume: bool) -> Result<PipelineOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;

    let mut evals = Vec::new();
    let mut pretrain_reports = Vec::new();
    let mut finetune_reports = Vec::new();
    for &seed in &cfg.seeds {
        let (seed_evals, pre, fine) = run_seed(cfg, seed, resume)?;
        evals.extend(seed_evals);
        pretrain_reports.push(pre);
        finetune_reports.push(fine);
    }

    let report = build_report(cfg, &evals).map_err(|e| e.phase("report"))?;
    report
        .write_csv(&cfg.out_dir.join("report.csv"))
        .map_err(|e| e.phase("report"))?;
    Ok(PipelineOutcome {
        report,
        evals,
        pretrain_reports,
        finetune_reports,
    })
}

/// Rebuild `report.csv` from the per-seed evaluation artifacts already on
/// disk (the `eval_<phase>.csv` and `mle_<phase>.csv` files).
pub fn rebuild_report(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let mut evals = Vec::new();
    for &seed in &cfg.seeds {
        let dir = seed_dir(cfg, seed);
        for phase in [Phase::Pretrained, Phase::Gifted] {
            let eval_path = dir.join(format!("eval_{phase}.csv"));
            let mle_path = dir.join(format!("mle_{phase}.csv"));
            let rewards = read_column_csv(&eval_path, 1)?;
            let lambdas = read_column_csv(&mle_path, 1)?;
            let mle_failures = lambdas.iter().filter(|l| !l.is_finite()).count();
            evals.push(SeedPhaseEval {
                seed,
                phase,
                rewards,
                lambdas,
                mle_failures,
                fan_final_over_initial: 0.0,
            });
        }
    }
    let report = build_report(cfg, &evals)?;
    report.write_csv(&cfg.out_dir.join("report.csv"))?;
    Ok(report)
}

fn read_column_csv(path: &Path, column: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut values = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let field = line
            .split(',')
            .nth(column)
            .ok_or_else(|| Error::CorruptArtifact {
                path: path.display().to_string(),
                detail: format!("line {} has no column {column}", lineno + 1),
            })?;
        let v = field
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::CorruptArtifact {
                path: path.display().to_string(),
                detail: format!("line {}: `{field}` is not a number", lineno + 1),
            })?;
        values.push(v);
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_csv_header_is_pinned() {
        let report = MetricsReport::default();
        assert!(report.to_csv().starts_with(
            "environment,phase,iqm_task_reward,reward_ci_low,reward_ci_high,iqm_mle,mle_ci_low,mle_ci_high,episodes,seeds\n"
        ));
    }

    #[test]
    fn column_reader_parses_and_rejects() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        std::fs::write(&path, "episode,total\n0,1.5\n1,2.5\n").unwrap();
        assert_eq!(read_column_csv(&path, 1).unwrap(), vec![1.5, 2.5]);
        std::fs::write(&path, "episode,total\n0,abc\n").unwrap();
        assert!(read_column_csv(&path, 1).is_err());
    }
}
