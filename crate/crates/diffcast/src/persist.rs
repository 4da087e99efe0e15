//! Model checkpoints: parameters plus the training provenance needed to
//! sample from them (denoiser config, channel count, noise schedule,
//! normalization mode).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::denoiser::{DenoiserConfig, DenoiserError, DenoiserModel};
use crate::nn::{Checkpoint, CheckpointError};
use crate::schedule::ScheduleSpec;
use crate::train::NormMode;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint meta: {0}")]
    Meta(#[from] serde_json::Error),
    #[error("checkpoint does not match the model: {0}")]
    Mismatch(String),
}

impl From<DenoiserError> for PersistError {
    fn from(e: DenoiserError) -> Self {
        PersistError::Mismatch(e.to_string())
    }
}

/// Provenance stored in the checkpoint header.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub denoiser: DenoiserConfig,
    pub channels: usize,
    pub schedule: ScheduleSpec,
    pub norm_mode: NormMode,
}

pub fn save_model(
    model: &DenoiserModel,
    schedule: &ScheduleSpec,
    norm_mode: NormMode,
    path: &Path,
) -> Result<(), PersistError> {
    let meta = ModelMeta {
        denoiser: *model.config(),
        channels: model.channels(),
        schedule: *schedule,
        norm_mode,
    };
    let ckpt = Checkpoint {
        meta: serde_json::to_value(&meta)?,
        tensors: model
            .named_params()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect(),
    };
    ckpt.save(path)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(DenoiserModel, ModelMeta), PersistError> {
    let ckpt = Checkpoint::load(path)?;
    let meta: ModelMeta = serde_json::from_value(ckpt.meta.clone())?;
    let mut model = DenoiserModel::new(meta.denoiser, meta.channels, 0)?;
    model.load_named_params(&ckpt.tensors)?;
    Ok((model, meta))
}
