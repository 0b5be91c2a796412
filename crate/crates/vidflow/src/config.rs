//! Run configuration: one JSON document drives every subcommand.
//!
//! Unknown keys are rejected. Defaults mirror the per-module defaults
//! (desk-scale model, AdamW 1e-4 / 0.01, constant schedule, rank 32,
//! 50 sampler steps, alpha 1, 250 pairs per task).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::ModelConfig;
use crate::error::{Error, Result};
use crate::flow::TrainConfig;
use crate::sampler::SampleConfig;
use crate::scene::TaskKind;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub blocks: usize,
    pub d: usize,
    pub heads: usize,
    pub patch: usize,
    pub task_vocab: usize,
    pub max_frames: usize,
    /// Seed of the frozen backbone / adapter init.
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::desk_scale();
        ModelSection {
            blocks: m.blocks,
            d: m.dim,
            heads: m.heads,
            patch: m.patch,
            task_vocab: m.task_vocab,
            max_frames: m.max_frames,
            seed: 42,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            blocks: self.blocks,
            dim: self.d,
            heads: self.heads,
            patch: self.patch,
            task_vocab: self.task_vocab,
            max_frames: self.max_frames,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Task names, comma-free; one dataset is generated per listed task.
    pub tasks: Vec<String>,
    pub n_pairs: usize,
    pub seed: u64,
    pub canvas: usize,
    /// Frame count of evaluation clips (training pairs are single-frame).
    pub eval_frames: usize,
    pub n_eval: usize,
}

impl DataSection {
    pub fn task_kinds(&self) -> Result<Vec<TaskKind>> {
        if self.tasks.is_empty() {
            return Err(Error::Config("data.tasks is empty".into()));
        }
        self.tasks.iter().map(|s| TaskKind::from_name(s)).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            data_dir: PathBuf::from("data"),
            run_dir: PathBuf::from("runs/default"),
        }
    }
}

/// Evaluation gates: `eval` exits nonzero when any configured threshold is
/// violated.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Minimum acceptable mean PSNR (dB) per task.
    pub min_psnr_db: Option<f64>,
    /// Maximum acceptable mean frozen-frame fraction per task.
    pub max_frozen_frame_fraction: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub data: DataSection,
    pub paths: PathsSection,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_slice(&bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model
            .model_config()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.sample
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.data.canvas == 0 {
            return Err(Error::Config("data.canvas must be >= 1".into()));
        }
        if self.data.canvas % self.model.patch != 0 {
            return Err(Error::Config(format!(
                "canvas {} not divisible by patch {}",
                self.data.canvas, self.model.patch
            )));
        }
        Ok(())
    }
}

impl DataSection {
    pub fn with_defaults_for(task: &str) -> Self {
        DataSection {
            tasks: vec![task.to_string()],
            n_pairs: 250,
            seed: 7,
            canvas: 32,
            eval_frames: 8,
            n_eval: 20,
        }
    }
}
