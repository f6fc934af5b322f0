//! Retrieval and re-identification metrics: nearest-neighbor rankings,
//! Recall@K, NMI of a k-means clustering, CMC and mAP.
//!
//! Two protocols are supported. Retrieval uses cosine similarity with every
//! test sample acting as a query against all others. Re-ID uses Euclidean
//! distance over an explicit query/gallery split and drops same-camera
//! matches of the query identity when camera ids are known.

mod cluster;
mod ranking;
mod report;

pub use cluster::{kmeans, nmi, nmi_from_assignments, KMeans, NmiScore, KMEANS_MAX_ITER, KMEANS_RESTARTS};
pub use ranking::{
    average_precision, cmc, mean_average_precision, rank_gallery, recall_at_k, CmcCurve, Exclusion,
    MeanAp, Ranking,
};
pub use report::{EvalReport, CMC_RANKS, RECALL_KS};

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::Sample;
use crate::embed::{EmbedError, EmbeddingModel};
use crate::episodes::stack_features;
use crate::numcore::{NumError, Tensor};
use crate::objectives::SimilarityMeasure;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("embedding width {found} does not match gallery width {expected}")]
    Dim { expected: usize, found: usize },
    #[error("{what}: expected length {expected}, found {found}")]
    Length {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("gallery embeddings contain non-finite values")]
    NonFinite,
    #[error("query {query} has no admissible gallery items")]
    EmptyGallery { query: usize },
    #[error("rank cutoff {k} must lie in 1..={limit}")]
    InvalidK { k: usize, limit: usize },
    #[error("cannot form {k} clusters from {n} points")]
    InvalidClusters { k: usize, n: usize },
    #[error("sample uid {uid} has no label; evaluation needs labeled test data")]
    Unlabeled { uid: u64 },
    #[error("protocol mismatch: {0}")]
    Protocol(String),
}

/// Embedded gallery with its labels and optional camera ids.
#[derive(Clone, Debug, PartialEq)]
pub struct GallerySet {
    embeddings: Tensor,
    labels: Vec<u32>,
    cameras: Option<Vec<u32>>,
}

impl GallerySet {
    pub fn new(
        embeddings: Tensor,
        labels: Vec<u32>,
        cameras: Option<Vec<u32>>,
    ) -> Result<Self, EvalError> {
        let (n, _) = embeddings.require_matrix("gallery")?;
        if labels.len() != n {
            return Err(EvalError::Length {
                what: "gallery labels",
                expected: n,
                found: labels.len(),
            });
        }
        if let Some(c) = &cameras {
            if c.len() != n {
                return Err(EvalError::Length {
                    what: "gallery cameras",
                    expected: n,
                    found: c.len(),
                });
            }
        }
        if !embeddings.is_finite() {
            return Err(EvalError::NonFinite);
        }
        Ok(Self {
            embeddings,
            labels,
            cameras,
        })
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn cameras(&self) -> Option<&[u32]> {
        self.cameras.as_deref()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Retrieval,
    Reid,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::Retrieval => "retrieval",
            Protocol::Reid => "reid",
        })
    }
}

impl std::str::FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "retrieval" => Ok(Protocol::Retrieval),
            "reid" | "re-id" => Ok(Protocol::Reid),
            other => Err(format!("unknown protocol `{other}`")),
        }
    }
}

/// How re-ID queries are carved out of the test set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuerySelection {
    /// The first `n` samples (in file order) of every identity become queries.
    PerClass(usize),
    /// Samples with these uids become queries.
    Uids(Vec<u64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub protocol: Protocol,
    /// Overrides the protocol's default measure.
    pub measure: Option<SimilarityMeasure>,
    pub queries: Option<QuerySelection>,
    /// Seeds the k-means restarts.
    pub seed: u64,
}

impl ProtocolConfig {
    pub fn retrieval() -> Self {
        Self {
            protocol: Protocol::Retrieval,
            measure: None,
            queries: None,
            seed: 0,
        }
    }

    pub fn reid(queries: QuerySelection) -> Self {
        Self {
            protocol: Protocol::Reid,
            measure: None,
            queries: Some(queries),
            seed: 0,
        }
    }

    pub fn measure(&self) -> SimilarityMeasure {
        self.measure.unwrap_or(match self.protocol {
            Protocol::Retrieval => SimilarityMeasure::Cosine,
            Protocol::Reid => SimilarityMeasure::NegativeEuclidean,
        })
    }
}

/// Embeds `test` with `model` and scores it under `cfg`.
pub fn evaluate(
    model: &EmbeddingModel,
    test: &[Sample],
    cfg: &ProtocolConfig,
) -> Result<EvalReport, EvalError> {
    let x = stack_checked(test, model.input_dim())?;
    let emb = model.forward(&x)?;
    evaluate_embeddings(&emb, test, cfg)
}

fn stack_checked(samples: &[Sample], dim: usize) -> Result<Tensor, EvalError> {
    if let Some(s) = samples.iter().find(|s| s.feature.len() != dim) {
        return Err(EvalError::Dim {
            expected: dim,
            found: s.feature.len(),
        });
    }
    let idx: Vec<usize> = (0..samples.len()).collect();
    Ok(stack_features(samples, &idx, dim))
}

/// Scores precomputed embeddings; row `i` of `emb` belongs to `samples[i]`.
pub fn evaluate_embeddings(
    emb: &Tensor,
    samples: &[Sample],
    cfg: &ProtocolConfig,
) -> Result<EvalReport, EvalError> {
    let (n, _) = emb.require_matrix("evaluate")?;
    if n != samples.len() {
        return Err(EvalError::Length {
            what: "samples",
            expected: n,
            found: samples.len(),
        });
    }
    let labels = samples
        .iter()
        .map(|s| s.label.ok_or(EvalError::Unlabeled { uid: s.uid }))
        .collect::<Result<Vec<u32>, _>>()?;
    let measure = cfg.measure();

    let classes: BTreeSet<u32> = labels.iter().copied().collect();
    let nmi_score = if classes.len() >= 2 {
        nmi(emb, &labels, classes.len(), &mut ChaCha8Rng::seed_from_u64(cfg.seed))?
    } else {
        NmiScore {
            value: 0.0,
            degenerate: false,
        }
    };

    let (query_labels, ranking, gallery) = match cfg.protocol {
        Protocol::Retrieval => {
            if cfg.queries.is_some() {
                return Err(EvalError::Protocol(
                    "retrieval uses every sample as a query; drop the query selection".into(),
                ));
            }
            let gallery = GallerySet::new(emb.clone(), labels.clone(), None)?;
            let ranking = rank_gallery(emb, &gallery, measure, Exclusion::SelfMatch)?;
            (labels.clone(), ranking, gallery)
        }
        Protocol::Reid => {
            let sel = cfg.queries.as_ref().ok_or_else(|| {
                EvalError::Protocol("re-ID evaluation needs a query/gallery split".into())
            })?;
            let is_query = select_queries(samples, &labels, sel)?;
            let (q_idx, g_idx): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| is_query[i]);
            if q_idx.is_empty() || g_idx.is_empty() {
                return Err(EvalError::Protocol(format!(
                    "query selection leaves {} queries and {} gallery items",
                    q_idx.len(),
                    g_idx.len()
                )));
            }
            let rows = |idx: &[usize]| {
                let mut data = Vec::with_capacity(idx.len() * emb.cols());
                idx.iter().for_each(|&i| data.extend_from_slice(emb.row(i)));
                Tensor::matrix(idx.len(), emb.cols(), data)
            };
            let cams: Option<Vec<u32>> = samples.iter().map(|s| s.camera).collect();
            let pick = |v: &[u32], idx: &[usize]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
            let gallery = GallerySet::new(
                rows(&g_idx)?,
                pick(&labels, &g_idx),
                cams.as_ref().map(|c| pick(c, &g_idx)),
            )?;
            let ql = pick(&labels, &q_idx);
            let qc = cams.as_ref().map(|c| pick(c, &q_idx));
            let exclusion = match &qc {
                Some(qc) => Exclusion::SameCameraSameId {
                    query_labels: &ql,
                    query_cameras: qc,
                },
                None => Exclusion::None,
            };
            let ranking = rank_gallery(&rows(&q_idx)?, &gallery, measure, exclusion)?;
            (ql, ranking, gallery)
        }
    };

    let limit = ranking.min_len().max(1);
    let clamp = |ks: &[usize]| ks.iter().map(|&k| k.min(limit)).collect::<Vec<_>>();
    let relabel = |ks: &[usize], vals: Vec<(usize, f64)>| {
        ks.iter().zip(vals).map(|(&k, (_, v))| (k, v)).collect::<Vec<_>>()
    };
    let recall = recall_at_k(&ranking, &query_labels, gallery.labels(), &clamp(&RECALL_KS))?;
    let curve = cmc(&ranking, &query_labels, gallery.labels(), &clamp(&CMC_RANKS))?;
    let map = mean_average_precision(&ranking, &query_labels, gallery.labels())?;

    Ok(EvalReport {
        recall: relabel(&RECALL_KS, recall),
        nmi: nmi_score.value,
        nmi_degenerate: nmi_score.degenerate,
        cmc: relabel(&CMC_RANKS, curve.values),
        map: map.value,
        excluded_queries: curve.excluded,
        num_queries: ranking.num_queries(),
        gallery_size: gallery.len(),
        config: cfg.clone(),
    })
}

fn select_queries(
    samples: &[Sample],
    labels: &[u32],
    sel: &QuerySelection,
) -> Result<Vec<bool>, EvalError> {
    match sel {
        QuerySelection::PerClass(per) => {
            if *per == 0 {
                return Err(EvalError::Protocol("need at least one query per class".into()));
            }
            let mut taken: BTreeMap<u32, usize> = BTreeMap::new();
            Ok(labels
                .iter()
                .map(|&l| {
                    let t = taken.entry(l).or_default();
                    *t += 1;
                    *t <= *per
                })
                .collect())
        }
        QuerySelection::Uids(uids) => {
            let wanted: BTreeSet<u64> = uids.iter().copied().collect();
            let present: BTreeSet<u64> = samples.iter().map(|s| s.uid).collect();
            if let Some(missing) = wanted.difference(&present).next() {
                return Err(EvalError::Protocol(format!(
                    "query uid {missing} is not in the test set"
                )));
            }
            Ok(samples.iter().map(|s| wanted.contains(&s.uid)).collect())
        }
    }
}
