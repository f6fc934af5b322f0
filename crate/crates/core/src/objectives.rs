//! Contrastive objectives on embeddings and on similarity representations.
//!
//! Both losses share one per-pair form: a positive pair pays its distance,
//! a negative pair pays `max(0, φ − distance)`. The similarity representation
//! of a sample is its vector of similarities to a bank of reference
//! embeddings, one coordinate per reference class.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episodes::{BankId, Pair, PairBatch};
use crate::numcore::{cosine_slices, dist, norm, NumError, Tape, Tensor, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("margin must be positive, got {0}")]
    InvalidMargin(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    Dim(usize, usize),
    #[error("similarity representations come from different reference banks")]
    BankMismatch,
    #[error("reference bank is empty")]
    EmptyBank,
    #[error("pair list is empty")]
    EmptyPairs,
}

/// How two embeddings are compared. Larger always means more similar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMeasure {
    Cosine,
    /// `−‖a − b‖₂`.
    NegativeEuclidean,
}

impl SimilarityMeasure {
    pub fn similarity(self, a: &[f64], b: &[f64]) -> Result<f64, ObjectiveError> {
        if a.len() != b.len() {
            return Err(ObjectiveError::Dim(a.len(), b.len()));
        }
        match self {
            Self::Cosine => Ok(cosine_slices(a, b)?),
            Self::NegativeEuclidean => Ok(-dist(a, b)),
        }
    }
}

impl std::str::FromStr for SimilarityMeasure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "euclidean" | "negative_euclidean" => Ok(Self::NegativeEuclidean),
            other => Err(format!("unknown similarity measure `{other}`")),
        }
    }
}

impl std::fmt::Display for SimilarityMeasure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cosine => "cosine",
            Self::NegativeEuclidean => "euclidean",
        })
    }
}

/// Contrastive margin φ > 0.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Margin(f64);

impl Margin {
    pub fn new(phi: f64) -> Result<Self, ObjectiveError> {
        if phi > 0.0 && phi.is_finite() {
            Ok(Self(phi))
        } else {
            Err(ObjectiveError::InvalidMargin(phi))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Similarities of one sample to every reference of a bank, in bank order.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityRepresentation {
    values: Vec<f64>,
    bank: BankId,
}

impl SimilarityRepresentation {
    pub fn new(values: Vec<f64>, bank: BankId) -> Self {
        Self { values, bank }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bank(&self) -> BankId {
        self.bank
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-pair contrastive value for a precomputed distance.
pub fn contrastive_term(distance: f64, target: bool, margin: Margin) -> f64 {
    if target {
        distance
    } else {
        (margin.0 - distance).max(0.0)
    }
}

/// Feature contrastive loss for one embedding pair.
pub fn feat_contrastive(
    f_i: &Tensor,
    f_j: &Tensor,
    target: bool,
    margin: Margin,
) -> Result<f64, ObjectiveError> {
    if f_i.len() != f_j.len() {
        return Err(ObjectiveError::Dim(f_i.len(), f_j.len()));
    }
    Ok(contrastive_term(dist(f_i.data(), f_j.data()), target, margin))
}

/// Similarity representation of `f` against the embeddings of a reference bank.
pub fn similarity_representation(
    f: &Tensor,
    bank_embeddings: &[Tensor],
    bank: BankId,
    measure: SimilarityMeasure,
) -> Result<SimilarityRepresentation, ObjectiveError> {
    if bank_embeddings.is_empty() {
        return Err(ObjectiveError::EmptyBank);
    }
    let values = bank_embeddings
        .iter()
        .map(|r| measure.similarity(f.data(), r.data()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SimilarityRepresentation { values, bank })
}

/// Similarity representations for every row of `embeddings` (`[B × d]`)
/// against the rows of `refs` (`[C × d]`).
pub fn similarity_rows(
    embeddings: &Tensor,
    refs: &Tensor,
    bank: BankId,
    measure: SimilarityMeasure,
) -> Result<Vec<SimilarityRepresentation>, ObjectiveError> {
    if refs.rows() == 0 || refs.is_empty() {
        return Err(ObjectiveError::EmptyBank);
    }
    (0..embeddings.rows())
        .map(|i| {
            let row = embeddings.row(i);
            let values = (0..refs.rows())
                .map(|k| measure.similarity(row, refs.row(k)))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(SimilarityRepresentation { values, bank })
        })
        .collect()
}

/// Similarity contrastive loss for one pair of representations.
pub fn sim_contrastive(
    s_i: &SimilarityRepresentation,
    s_j: &SimilarityRepresentation,
    target: bool,
    margin: Margin,
) -> Result<f64, ObjectiveError> {
    if s_i.bank != s_j.bank {
        return Err(ObjectiveError::BankMismatch);
    }
    if s_i.len() != s_j.len() {
        return Err(ObjectiveError::Dim(s_i.len(), s_j.len()));
    }
    Ok(contrastive_term(dist(&s_i.values, &s_j.values), target, margin))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

/// Reduces a per-pair loss over a pair batch.
pub fn batch_loss<F>(pairs: &PairBatch, mut per_pair: F, reduction: Reduction) -> Result<f64, ObjectiveError>
where
    F: FnMut(&Pair) -> Result<f64, ObjectiveError>,
{
    if pairs.is_empty() {
        return Err(ObjectiveError::EmptyPairs);
    }
    let mut total = 0.0;
    for p in &pairs.pairs {
        total += per_pair(p)?;
    }
    Ok(match reduction {
        Reduction::Mean => total / pairs.len() as f64,
        Reduction::Sum => total,
    })
}

/// Differentiable single-pair contrastive loss between two `[1 × d]` rows.
pub fn feat_contrastive_on_tape(
    tape: &mut Tape,
    f_i: Var,
    f_j: Var,
    target: bool,
    margin: Margin,
) -> Result<Var, ObjectiveError> {
    let d = tape.cross_distances(f_i, f_j)?;
    let l = tape.contrastive(d, &[target], margin.0)?;
    Ok(tape.sum(l))
}

/// Differentiable `[B × C]` similarity matrix between rows of `f` and `refs`.
pub fn similarity_matrix_on_tape(
    tape: &mut Tape,
    f: Var,
    refs: Var,
    measure: SimilarityMeasure,
) -> Result<Var, ObjectiveError> {
    let (fc, rc) = (tape.value(f).cols(), tape.value(refs).cols());
    if fc != rc {
        return Err(ObjectiveError::Dim(fc, rc));
    }
    if tape.value(refs).rows() == 0 {
        return Err(ObjectiveError::EmptyBank);
    }
    match measure {
        SimilarityMeasure::Cosine => {
            for v in [f, refs] {
                let t = tape.value(v);
                if (0..t.rows()).any(|i| norm(t.row(i)) == 0.0) {
                    return Err(NumError::ZeroNorm {
                        op: "cosine_similarity",
                    }
                    .into());
                }
            }
            let fnorm = tape.normalize_rows(f, f64::MIN_POSITIVE);
            let rnorm = tape.normalize_rows(refs, f64::MIN_POSITIVE);
            let rt = tape.transpose(rnorm)?;
            Ok(tape.matmul(fnorm, rt)?)
        }
        SimilarityMeasure::NegativeEuclidean => {
            let d = tape.cross_distances(f, refs)?;
            Ok(tape.scale(d, -1.0))
        }
    }
}

/// Differentiable contrastive loss over every pair in `pairs`, where pair
/// indices address rows of `x` (embeddings or similarity representations).
pub fn pair_loss_on_tape(
    tape: &mut Tape,
    x: Var,
    pairs: &PairBatch,
    margin: Margin,
    reduction: Reduction,
) -> Result<Var, ObjectiveError> {
    if pairs.is_empty() {
        return Err(ObjectiveError::EmptyPairs);
    }
    let d = tape.pair_distances(x, &pairs.index_pairs())?;
    let l = tape.contrastive(d, &pairs.targets(), margin.0)?;
    Ok(match reduction {
        Reduction::Mean => tape.mean(l)?,
        Reduction::Sum => tape.sum(l),
    })
}
