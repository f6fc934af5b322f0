//! Samples, the line-oriented dataset file format, the synthetic benchmark
//! generator and embedding export.

mod format;
mod synth;

pub use format::{
    export_embeddings, load_dataset, parse_dataset, save_dataset, DatasetFile, FORMAT_VERSION,
};
pub use synth::{generate_synthetic, split_by_label_ratio, SynthSpec, SyntheticData};

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pseudolabel::{audit_pairs, PairAudit, PseudoPairSet};

/// One datum: a feature vector plus optional class label and camera id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub uid: u64,
    pub label: Option<u32>,
    pub camera: Option<u32>,
    pub feature: Vec<f64>,
}

impl Sample {
    pub fn new(uid: u64, label: Option<u32>, camera: Option<u32>, feature: Vec<f64>) -> Self {
        Self {
            uid,
            label,
            camera,
            feature,
        }
    }
}

/// Ground-truth labels of an unlabeled pool. Training code only gets to ask
/// for pair audits; the labels themselves never leave this type.
#[derive(Clone, Debug)]
pub struct HiddenLabels {
    labels: Vec<u32>,
}

impl HiddenLabels {
    /// Audits pseudo pairs built over `batch`, a list of pool indices that the
    /// pair indices refer to.
    pub fn audit(
        &self,
        pseudo: &PseudoPairSet,
        batch: &[usize],
    ) -> Result<PairAudit, crate::pseudolabel::PseudoLabelError> {
        let labels: Vec<Option<u32>> = batch.iter().map(|&i| self.labels.get(i).copied()).collect();
        audit_pairs(pseudo, &labels)
    }

    /// Set of distinct hidden classes, for label-disjointness checks.
    pub fn distinct_labels(&self) -> BTreeSet<u32> {
        self.labels.iter().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Unlabeled training pool. Any labels present on construction are moved into
/// a [`HiddenLabels`] oracle and stripped from the samples.
#[derive(Clone, Debug)]
pub struct UnlabeledPool {
    samples: Vec<Sample>,
    oracle: Option<HiddenLabels>,
}

impl UnlabeledPool {
    pub fn new(samples: Vec<Sample>) -> Self {
        let oracle = if !samples.is_empty() && samples.iter().all(|s| s.label.is_some()) {
            Some(HiddenLabels {
                labels: samples.iter().map(|s| s.label.unwrap_or_default()).collect(),
            })
        } else {
            None
        };
        let samples = samples
            .into_iter()
            .map(|mut s| {
                s.label = None;
                s
            })
            .collect();
        Self { samples, oracle }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn oracle(&self) -> Option<&HiddenLabels> {
        self.oracle.as_ref()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples with their oracle labels restored, for writing the pool to disk.
    pub fn to_samples_with_oracle(&self) -> Vec<Sample> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| Sample {
                label: self.oracle.as_ref().map(|o| o.labels[i]),
                ..s.clone()
            })
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed header: {msg}")]
    Header { line: usize, msg: String },
    #[error("line {line}: malformed row: {msg}")]
    Row { line: usize, msg: String },
    #[error("line {line}: dimension mismatch: expected {expected} values, found {found}")]
    Dimension {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: duplicate uid {uid}")]
    DuplicateUid { line: usize, uid: u64 },
    #[error("row count mismatch: header declares {expected} rows, found {found}")]
    RowCount { expected: usize, found: usize },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("label ratio {0} must lie strictly between 0 and 1")]
    InvalidRatio(f64),
    #[error("need at least {needed} classes, got {got}")]
    TooFewClasses { needed: usize, got: usize },
    #[error(transparent)]
    Episode(#[from] crate::episodes::EpisodeError),
    #[error(transparent)]
    Embed(#[from] crate::embed::EmbedError),
}
