use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, EmbedError, EmbeddingModel};
use crate::fsutil::atomic_write;

pub const CHECKPOINT_FORMAT: &str = "metasim-checkpoint";

/// Everything needed to resume or reproduce a model: architecture, weights,
/// optimizer moments, epoch counter and seed. Stored as JSON with
/// round-trip-exact floats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: EmbeddingModel,
    pub optimizer: Option<AdamState>,
    pub epoch: usize,
    pub seed: u64,
}

impl Checkpoint {
    pub fn new(
        model: EmbeddingModel,
        optimizer: Option<AdamState>,
        epoch: usize,
        seed: u64,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: 1,
            model,
            optimizer,
            epoch,
            seed,
        }
    }

    pub fn to_json(&self) -> Result<String, EmbedError> {
        serde_json::to_string(self).map_err(|e| EmbedError::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, EmbedError> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| EmbedError::Format(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != 1 {
            return Err(EmbedError::Format(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        // Re-validate shapes: the file may have been edited by hand.
        let model = EmbeddingModel::from_params(
            ck.model.sizes(),
            ck.model.params().to_vec(),
            ck.model.normalize_output(),
        )?;
        if let Some(opt) = &ck.optimizer {
            if !opt.matches(&model) {
                return Err(EmbedError::Format(
                    "optimizer state does not match model shapes".into(),
                ));
            }
        }
        Ok(ck)
    }
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), EmbedError> {
    let json = ck.to_json()?;
    atomic_write(path, json.as_bytes()).map_err(|source| EmbedError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, EmbedError> {
    let text = std::fs::read_to_string(path).map_err(|source| EmbedError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Checkpoint::from_json(&text)
}
