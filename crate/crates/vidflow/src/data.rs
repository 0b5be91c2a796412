//! Paired-dataset layout on disk.
//!
//! A dataset directory holds `{id}_src.vvf` / `{id}_tgt.vvf` pairs plus a
//! `manifest.json` mapping ids to task ids:
//!
//! ```json
//! { "pairs": [{"id": "...", "task_id": 0, "src": "...", "tgt": "..."}],
//!   "seed": 7, "task": "channel-permute" }
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::{read_vvf, write_vvf, Video};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestPair {
    pub id: String,
    pub task_id: usize,
    pub src: String,
    pub tgt: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub pairs: Vec<ManifestPair>,
    pub seed: u64,
    /// Human-readable task descriptor (or comma-joined list for mixed sets).
    pub task: String,
}

/// One supervised example: source conditions the edit, target is its result.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub source: Video,
    pub target: Video,
    pub task_id: usize,
}

impl TrainingPair {
    /// Dimensions must match; values are clamped into [0, 1].
    pub fn new(mut source: Video, mut target: Video, task_id: usize) -> Result<Self> {
        if source.frames != target.frames
            || source.height != target.height
            || source.width != target.width
            || source.channels != target.channels
        {
            return Err(Error::invalid(
                "training_pair",
                format!(
                    "source {}x{}x{}x{} vs target {}x{}x{}x{}",
                    source.frames,
                    source.height,
                    source.width,
                    source.channels,
                    target.frames,
                    target.height,
                    target.width,
                    target.channels
                ),
            ));
        }
        source.clamp_unit();
        target.clamp_unit();
        Ok(TrainingPair {
            source,
            target,
            task_id,
        })
    }
}

/// Write pairs and manifest into `dir` (created if needed).
pub fn write_dataset(
    dir: &Path,
    pairs: &[(String, usize, Video, Video)],
    seed: u64,
    task: &str,
) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest {
        pairs: Vec::with_capacity(pairs.len()),
        seed,
        task: task.to_string(),
    };
    for (id, task_id, src, tgt) in pairs {
        let src_name = format!("{id}_src.vvf");
        let tgt_name = format!("{id}_tgt.vvf");
        write_vvf(&dir.join(&src_name), src)?;
        write_vvf(&dir.join(&tgt_name), tgt)?;
        manifest.pairs.push(ManifestPair {
            id: id.clone(),
            task_id: *task_id,
            src: src_name,
            tgt: tgt_name,
        });
    }
    let json = serde_json::to_vec_pretty(&manifest)?;
    crate::video::write_atomic(&dir.join(MANIFEST_NAME), &json)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_NAME);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Load every pair listed in the directory manifest.
pub fn load_dataset(dir: &Path) -> Result<(Vec<TrainingPair>, Manifest)> {
    let manifest = read_manifest(dir)?;
    let mut pairs = Vec::with_capacity(manifest.pairs.len());
    for mp in &manifest.pairs {
        let src = read_vvf(&dir.join(&mp.src))?;
        let tgt = read_vvf(&dir.join(&mp.tgt))?;
        pairs.push(TrainingPair::new(src, tgt, mp.task_id)?);
    }
    Ok((pairs, manifest))
}
