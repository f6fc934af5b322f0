//! The embedding network, its optimizer, the learning-rate schedule and
//! checkpoint persistence.

mod adam;
mod checkpoint;
mod model;
mod schedule;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use model::{EmbeddingModel, NORMALIZE_EPS};
pub use schedule::LrSchedule;

use std::path::PathBuf;

use thiserror::Error;

use crate::numcore::NumError;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("input width {found} does not match model input dimension {expected}")]
    InputWidth { expected: usize, found: usize },
    #[error("parameter {index}: gradient shape {found:?} does not match parameter shape {expected:?}")]
    GradShape {
        index: usize,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("expected {expected} gradients, got {found}")]
    GradCount { expected: usize, found: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint: {0}")]
    Format(String),
}
