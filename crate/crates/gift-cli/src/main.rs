//! `gift` — drive the stabilising fine-tuning pipeline from the shell.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 when a pipeline
//! phase fails (the phase is named on stderr).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gift_core::checkpoint::Phase;
use gift_core::config::ExperimentConfig;
use gift_core::pipeline::{
    build_report, rebuild_report, run_pipeline, stage_eval, stage_fan, stage_finetune, stage_mle,
    stage_pretrain, stage_reference,
};
use gift_core::stats::iqm;
use gift_core::Error;

#[derive(Parser)]
#[command(
    name = "gift",
    about = "Pre-train a control policy, fine-tune it on a stability reward, and quantify the result",
    version
)]
struct Cli {
    /// Experiment configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured seed list with a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Reuse artifacts already present in the output directory.
    #[arg(long, global = true)]
    resume: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stage 1: pre-train the baseline policy on the task reward.
    Train,
    /// Stage 2a: generate the reference trajectory from the pre-trained policy.
    GenRef,
    /// Stages 2b-3: build the stabilising wrapper and fine-tune in it.
    Finetune,
    /// Evaluate a checkpoint: per-episode rewards and per-state exponents.
    Eval {
        #[arg(long, default_value = "pretrained")]
        phase: Phase,
    },
    /// Estimate Maximal Lyapunov Exponents for a checkpoint.
    Mle {
        #[arg(long, default_value = "pretrained")]
        phase: Phase,
    },
    /// Roll a perturbation fan for a checkpoint.
    Fan {
        #[arg(long, default_value = "pretrained")]
        phase: Phase,
    },
    /// Run every stage for every seed and write the pooled report.
    Pipeline,
    /// Rebuild report.csv from evaluation artifacts already on disk.
    Report,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::InvalidConfig(_) | Error::TooFewSamples { .. } => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Train => {
            for &seed in &cfg.seeds {
                let (_, report) =
                    stage_pretrain(&cfg, seed, cli.resume).map_err(|e| e.phase("pretrain"))?;
                if let Some(last) = report.rows.last() {
                    println!(
                        "seed {seed}: {} timesteps, mean return {:.2}",
                        last.timesteps, last.mean_return
                    );
                } else {
                    println!("seed {seed}: pre-trained checkpoint reused");
                }
            }
            Ok(())
        }
        Command::GenRef => {
            for &seed in &cfg.seeds {
                let traj =
                    stage_reference(&cfg, seed, cli.resume).map_err(|e| e.phase("reference"))?;
                println!(
                    "seed {seed}: reference of {} observations, total reward {:.2}",
                    traj.len(),
                    traj.total_reward
                );
            }
            Ok(())
        }
        Command::Finetune => {
            for &seed in &cfg.seeds {
                let (_, report) =
                    stage_finetune(&cfg, seed, cli.resume).map_err(|e| e.phase("finetune"))?;
                if let Some(last) = report.rows.last() {
                    println!(
                        "seed {seed}: {} timesteps, mean intrinsic return {:.2}",
                        last.timesteps, last.mean_return
                    );
                } else {
                    println!("seed {seed}: fine-tuned checkpoint reused");
                }
            }
            Ok(())
        }
        Command::Eval { phase } => {
            let mut evals = Vec::new();
            for &seed in &cfg.seeds {
                let eval = stage_eval(&cfg, seed, phase)
                    .map_err(|e| e.phase("evaluate"))?;
                println!(
                    "seed {seed} [{phase}]: reward IQM {:.3}, exponent IQM {:.5} ({} exponent failures)",
                    iqm(&eval.rewards).unwrap_or(f64::NAN),
                    iqm(&eval.finite_lambdas()).unwrap_or(f64::NAN),
                    eval.mle_failures
                );
                evals.push(eval);
            }
            let report = build_report(&cfg, &evals).map_err(|e| e.phase("evaluate"))?;
            for row in &report.rows {
                println!(
                    "pooled [{}]: reward {:.3} [{:.3}, {:.3}], exponent {:.5} [{:.5}, {:.5}]",
                    row.phase,
                    row.iqm_task_reward,
                    row.reward_ci.0,
                    row.reward_ci.1,
                    row.iqm_mle,
                    row.mle_ci.0,
                    row.mle_ci.1
                );
            }
            Ok(())
        }
        Command::Mle { phase } => {
            for &seed in &cfg.seeds {
                let estimates =
                    stage_mle(&cfg, seed, phase).map_err(|e| e.phase("mle"))?;
                let lambdas: Vec<f64> = estimates
                    .iter()
                    .filter_map(|e| e.as_ref().ok().map(|m| m.lambda))
                    .collect();
                println!(
                    "seed {seed} [{phase}]: exponent IQM {:.5} over {} states",
                    iqm(&lambdas).unwrap_or(f64::NAN),
                    lambdas.len()
                );
            }
            Ok(())
        }
        Command::Fan { phase } => {
            for &seed in &cfg.seeds {
                let ratio = stage_fan(&cfg, seed, phase).map_err(|e| e.phase("fan"))?;
                println!("seed {seed} [{phase}]: final/initial divergence {ratio:.1}x");
            }
            Ok(())
        }
        Command::Pipeline => {
            let outcome = run_pipeline(&cfg, cli.resume)?;
            for row in &outcome.report.rows {
                println!(
                    "{} [{}]: reward {:.3} [{:.3}, {:.3}], exponent {:.5} [{:.5}, {:.5}] ({} episodes)",
                    row.environment,
                    row.phase,
                    row.iqm_task_reward,
                    row.reward_ci.0,
                    row.reward_ci.1,
                    row.iqm_mle,
                    row.mle_ci.0,
                    row.mle_ci.1,
                    row.episodes
                );
            }
            println!("report written to {}", cfg.out_dir.join("report.csv").display());
            Ok(())
        }
        Command::Report => {
            let report = rebuild_report(&cfg).map_err(|e| e.phase("report"))?;
            println!(
                "report rebuilt from artifacts: {} rows -> {}",
                report.rows.len(),
                cfg.out_dir.join("report.csv").display()
            );
            Ok(())
        }
    }
}
