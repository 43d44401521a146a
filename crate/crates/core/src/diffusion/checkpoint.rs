use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::model::{Denoiser, DenoiserShape};
use super::train::TrainConfig;
use super::DiffusionError;

/// JSON sidecar describing a flat little-endian f64 parameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Group name to `[rows, cols]`, in storage order given by `groups`.
    pub shapes: BTreeMap<String, [usize; 2]>,
    pub groups: Vec<String>,
    pub denoiser: DenoiserShape,
    pub param_count: usize,
    pub seed: u64,
    pub step: usize,
    /// `theta` or `ema`.
    pub weights: String,
    pub config: TrainConfig,
}

impl CheckpointMeta {
    pub fn new(config: &TrainConfig, shape: DenoiserShape, step: usize, weights: &str) -> Self {
        let groups = shape.groups();
        CheckpointMeta {
            shapes: groups.iter().map(|g| (g.name.to_string(), [g.rows, g.cols])).collect(),
            groups: groups.iter().map(|g| g.name.to_string()).collect(),
            denoiser: shape,
            param_count: shape.param_count(),
            seed: config.seed,
            step,
            weights: weights.to_string(),
            config: config.clone(),
        }
    }
}

fn paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("bin"), base.with_extension("json"))
}

/// Writes `<base>.bin` and `<base>.json`.
pub fn save_checkpoint(base: &Path, params: &[f64], meta: &CheckpointMeta) -> Result<(), DiffusionError> {
    if params.len() != meta.param_count {
        return Err(DiffusionError::ShapeMismatch { expected: meta.param_count, got: params.len() });
    }
    let (bin, json) = paths(base);
    let mut bytes = Vec::with_capacity(params.len() * 8);
    for p in params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(bin, bytes)?;
    let sidecar = serde_json::to_vec_pretty(meta).map_err(|e| DiffusionError::Checkpoint(e.to_string()))?;
    fs::write(json, sidecar)?;
    Ok(())
}

pub fn load_checkpoint(base: &Path) -> Result<(Denoiser<f64>, CheckpointMeta), DiffusionError> {
    let (bin, json) = paths(base);
    let meta: CheckpointMeta =
        serde_json::from_slice(&fs::read(json)?).map_err(|e| DiffusionError::Checkpoint(e.to_string()))?;
    let bytes = fs::read(bin)?;
    if bytes.len() != meta.param_count * 8 || meta.param_count != meta.denoiser.param_count() {
        return Err(DiffusionError::Checkpoint(format!(
            "parameter file has {} bytes, sidecar declares {} parameters",
            bytes.len(),
            meta.param_count
        )));
    }
    let params = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    Ok((Denoiser::from_params(meta.denoiser, params)?, meta))
}
