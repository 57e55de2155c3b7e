//! Experiment configuration and content digests.
//!
//! A config fully determines an experiment (task, embeddings, network,
//! schedule, optimizer, seeds); its digest — a SHA-256 prefix over the
//! canonical JSON — is embedded in every artifact a run produces, and `eval`
//! refuses to combine artifacts with mismatched digests unless forced.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::SyntheticEmbedSpec;
use crate::error::{Error, Result};
use crate::flow::ScheduleConfig;
use crate::net::{NetDims, TimeEmbedConfig};
use crate::numcore::AdamConfig;
use crate::task::TaskConfig;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum EmbeddingConfig {
    /// Generated condition embeddings for the task's condition layout.
    Synthetic { spec: SyntheticEmbedSpec },
    /// A pre-built embedding table on disk.
    Table { path: String },
}

/// Where the bootstrap velocity for flow-map training comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum VSourceChoice {
    /// Pretrained field when finetuning from a checkpoint, conditional
    /// ground truth otherwise.
    #[default]
    Auto,
    Conditional,
    Pretrained,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    /// Evaluate (and log a metrics row) every this many steps; 0 disables
    /// intermediate evaluation, leaving only the final row.
    pub eval_every: u64,
    /// Write a checkpoint every this many steps; 0 keeps only the final one.
    pub checkpoint_every: u64,
    /// Samples per condition for each in-training evaluation.
    pub eval_samples_per_condition: usize,
    #[serde(default)]
    pub v_source: VSourceChoice,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 10_000,
            batch_size: 256,
            eval_every: 500,
            checkpoint_every: 2_000,
            eval_samples_per_condition: 2_000,
            v_source: VSourceChoice::Auto,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: TaskConfig,
    pub embedding: EmbeddingConfig,
    pub net: NetDims,
    pub time_embed: TimeEmbedConfig,
    pub schedule: ScheduleConfig,
    pub optim: AdamConfig,
    pub train: TrainConfig,
    pub seed: u64,
    /// Samples per condition when generating datasets.
    pub data_per_condition: usize,
    /// Held-out samples per condition for evaluation.
    pub heldout_per_condition: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.net.validate()?;
        self.time_embed.validate()?;
        self.schedule.validate()?;
        if let EmbeddingConfig::Synthetic { spec } = &self.embedding {
            spec.validate()?;
            match &self.task {
                TaskConfig::Mixture {
                    n_attributes,
                    values_per_attribute,
                    ..
                } => {
                    if spec.n_attributes != *n_attributes
                        || spec.values_per_attribute != *values_per_attribute
                    {
                        return Err(Error::InvalidArg(
                            "embedding spec layout must match the mixture task layout".into(),
                        ));
                    }
                }
                TaskConfig::Gaussian { .. } => {
                    return Err(Error::InvalidArg(
                        "synthetic embeddings require a mixture task; the gaussian task \
                         uses the zero embedding"
                            .into(),
                    ));
                }
            }
            if spec.dim != self.net.cond_dim {
                return Err(Error::InvalidArg(format!(
                    "embedding dim {} must match net cond_dim {}",
                    spec.dim, self.net.cond_dim
                )));
            }
        }
        if self.net.data_dim != self.task.data_dim() {
            return Err(Error::InvalidArg(format!(
                "net data_dim {} must match task data_dim {}",
                self.net.data_dim,
                self.task.data_dim()
            )));
        }
        if self.train.batch_size == 0 || self.train.steps == 0 {
            return Err(Error::InvalidArg("steps and batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Content digest: SHA-256 prefix of the canonical JSON serialization.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let hash = Sha256::digest(json.as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
