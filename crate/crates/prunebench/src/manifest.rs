//! Declarative experiment manifests.
//!
//! A manifest fully describes one experiment: dataset, model, pipeline,
//! pruning config, schedules, and seeds. Runs are reproducible from the
//! manifest alone; the manifest hash (sha256 of canonicalized TOML) names
//! the experiment in results files and checkpoint caches.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pipeline {
    #[serde(rename = "scratch")]
    Scratch,
    #[serde(rename = "prune-finetune")]
    PruneFinetune,
}

/// Schedule specification; the planner resolves it to a concrete LRSchedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub epochs: usize,
    pub init_lr: f64,
    pub final_lr: f64,
    #[serde(default = "default_kind")]
    pub kind: String,
}

fn default_kind() -> String {
    "step".to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneSpec {
    pub ratio: f32,
    pub epoch: usize,
    #[serde(default = "default_criterion")]
    pub criterion: String,
    /// Seed for the random criterion; ignored for l1.
    #[serde(default)]
    pub criterion_seed: u64,
}

fn default_criterion() -> String {
    "l1".to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FtSpec {
    pub init_lr: f64,
    pub epochs: usize,
    #[serde(default = "default_kind")]
    pub kind: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub dataset: String,
    pub model: String,
    pub pipeline: Pipeline,
    pub seeds: Vec<u64>,
    pub scratch: ScheduleSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prune: Option<PruneSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ft: Option<FtSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_checkpoint_hash: Option<String>,
}

impl ExperimentManifest {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidManifest("seeds must be non-empty".into()));
        }
        match self.pipeline {
            Pipeline::PruneFinetune => {
                let prune = self
                    .prune
                    .as_ref()
                    .ok_or_else(|| Error::InvalidManifest("prune-finetune requires [prune]".into()))?;
                self.ft
                    .as_ref()
                    .ok_or_else(|| Error::InvalidManifest("prune-finetune requires [ft]".into()))?;
                if prune.epoch > self.scratch.epochs {
                    return Err(Error::InvalidManifest(format!(
                        "prune.epoch {} exceeds scratch epochs {}",
                        prune.epoch, self.scratch.epochs
                    )));
                }
                if !matches!(prune.criterion.as_str(), "l1" | "random") {
                    return Err(Error::InvalidManifest(format!(
                        "unknown prune criterion `{}`",
                        prune.criterion
                    )));
                }
            }
            Pipeline::Scratch => {
                if self.base_checkpoint_hash.is_some() {
                    return Err(Error::InvalidManifest(
                        "scratch pipeline cannot reuse a base checkpoint".into(),
                    ));
                }
            }
        }
        for kind in std::iter::once(&self.scratch.kind).chain(self.ft.iter().map(|f| &f.kind)) {
            if !matches!(kind.as_str(), "step" | "cosine") {
                return Err(Error::InvalidManifest(format!(
                    "unknown schedule kind `{kind}`"
                )));
            }
        }
        Ok(())
    }

    /// Effective pruning ratio (0 for scratch pipelines).
    pub fn prune_ratio(&self) -> f32 {
        self.prune.as_ref().map(|p| p.ratio).unwrap_or(0.0)
    }

    /// Pruning-phase (pretraining) epoch count.
    pub fn prune_epoch(&self) -> usize {
        match self.pipeline {
            Pipeline::PruneFinetune => self.prune.as_ref().map(|p| p.epoch).unwrap_or(0),
            Pipeline::Scratch => 0,
        }
    }

    /// Finetune-phase epoch count. For scratch pipelines the whole schedule
    /// plays the role of the finetune phase in setup comparisons.
    pub fn finetune_epochs(&self) -> usize {
        match self.pipeline {
            Pipeline::PruneFinetune => self.ft.as_ref().map(|f| f.epochs).unwrap_or(0),
            Pipeline::Scratch => self.scratch.epochs,
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.prune_epoch() + self.finetune_epochs()
    }

    /// Canonical bytes: TOML re-serialized from the parsed structure, so
    /// whitespace and key order in the source file do not affect the hash.
    pub fn canonical_bytes(&self) -> Result<Vec<u8>> {
        toml::to_string(self)
            .map(String::into_bytes)
            .map_err(|e| Error::InvalidManifest(format!("serialization failed: {e}")))
    }

    pub fn hash(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_bytes()?);
        Ok(hex(&hasher.finalize()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let m: ExperimentManifest =
            toml::from_str(text).map_err(|e| Error::InvalidManifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.canonical_bytes()?)?;
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
