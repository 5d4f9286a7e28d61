//! Versioned checkpoints: policy, value function, frozen normalization
//! statistics and the configuration snapshot, as canonical JSON.
//!
//! Serialization is deterministic (struct field order, shortest-round-trip
//! floats), so `save(load(x))` reproduces `x` byte for byte.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::normalize::ObsNormalizer;
use crate::policy::{Policy, ValueFn};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrained,
    Gifted,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::Pretrained => write!(f, "pretrained"),
            Phase::Gifted => write!(f, "gifted"),
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrained" => Ok(Phase::Pretrained),
            "gifted" => Ok(Phase::Gifted),
            other => Err(Error::InvalidConfig(format!(
                "unknown phase `{other}` (expected pretrained or gifted)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub phase: Phase,
    pub policy: Policy,
    pub value: ValueFn,
    pub normalizer: ObsNormalizer,
    pub config: ExperimentConfig,
}

impl Checkpoint {
    pub fn new(
        phase: Phase,
        policy: Policy,
        value: ValueFn,
        normalizer: ObsNormalizer,
        config: ExperimentConfig,
    ) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            phase,
            policy,
            value,
            normalizer,
            config,
        }
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = serde_json::to_vec(ckpt).map_err(|e| Error::CorruptArtifact {
        path: path.display().to_string(),
        detail: format!("serialization failed: {e}"),
    })?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Load a checkpoint, failing loudly on corruption or a format-version
/// mismatch. When `expected_phase` is given, a checkpoint from any other
/// phase is rejected; pass `None` to explicitly override the phase check.
pub fn load_checkpoint(path: &Path, expected_phase: Option<Phase>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let ckpt: Checkpoint =
        serde_json::from_slice(&bytes).map_err(|e| Error::CorruptArtifact {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.display().to_string(),
            found: ckpt.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if let Some(expected) = expected_phase {
        if ckpt.phase != expected {
            return Err(Error::PhaseMismatch {
                found: ckpt.phase.to_string(),
                expected: expected.to_string(),
            });
        }
    }
    ckpt.policy.validate()?;
    ckpt.value.net.validate()?;
    Ok(ckpt)
}
