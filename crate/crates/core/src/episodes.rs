//! Episodic data machinery: label-disjoint meta-train/meta-validation splits,
//! per-class reference sampling and batch/pair construction.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use thiserror::Error;

use crate::datasets::Sample;
use crate::numcore::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EpisodeError {
    #[error("labeled set is empty")]
    EmptySet,
    #[error("sample uid {uid} has no label")]
    Unlabeled { uid: u64 },
    #[error("sample uid {uid} has dimension {found}, expected {expected}")]
    DimMismatch {
        uid: u64,
        expected: usize,
        found: usize,
    },
    #[error("class {label} has {count} sample(s); at least {needed} required")]
    TooFewSamples {
        label: u32,
        count: usize,
        needed: usize,
    },
    #[error("meta-train class count {c_mt} must lie in 1..{classes}")]
    InvalidSplit { c_mt: usize, classes: usize },
    #[error("class {0} not present in the set")]
    MissingClass(u32),
    #[error("requested {requested} classes but the set only has {available}")]
    TooManyClasses { requested: usize, available: usize },
    #[error("batch size {b} is invalid for a population of {population}")]
    InvalidBatch { b: usize, population: usize },
}

/// Labeled samples indexed by class.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    samples: Vec<Sample>,
    classes: BTreeMap<u32, Vec<usize>>,
    dim: usize,
}

impl LabeledSet {
    /// Every sample must carry a label and share one feature dimension.
    pub fn new(samples: Vec<Sample>) -> Result<Self, EpisodeError> {
        let dim = samples.first().ok_or(EpisodeError::EmptySet)?.feature.len();
        let mut classes: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            let label = s.label.ok_or(EpisodeError::Unlabeled { uid: s.uid })?;
            if s.feature.len() != dim {
                return Err(EpisodeError::DimMismatch {
                    uid: s.uid,
                    expected: dim,
                    found: s.feature.len(),
                });
            }
            classes.entry(label).or_default().push(i);
        }
        Ok(Self {
            samples,
            classes,
            dim,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Distinct labels in ascending order.
    pub fn labels(&self) -> Vec<u32> {
        self.classes.keys().copied().collect()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_indices(&self, label: u32) -> Option<&[usize]> {
        self.classes.get(&label).map(Vec::as_slice)
    }

    pub fn label_of(&self, index: usize) -> u32 {
        self.samples[index].label.expect("labeled set invariant")
    }

    /// Fails if any class has fewer than `needed` samples.
    pub fn require_min_per_class(&self, needed: usize) -> Result<(), EpisodeError> {
        for (&label, idx) in &self.classes {
            if idx.len() < needed {
                return Err(EpisodeError::TooFewSamples {
                    label,
                    count: idx.len(),
                    needed,
                });
            }
        }
        Ok(())
    }

    /// The samples belonging to `labels`, in original order.
    pub fn subset(&self, labels: &[u32]) -> Result<Self, EpisodeError> {
        for l in labels {
            if !self.classes.contains_key(l) {
                return Err(EpisodeError::MissingClass(*l));
            }
        }
        let keep: Vec<Sample> = self
            .samples
            .iter()
            .filter(|s| s.label.is_some_and(|l| labels.contains(&l)))
            .cloned()
            .collect();
        Self::new(keep)
    }

    /// Stacks the features of `indices` into a `[len × dim]` matrix.
    pub fn features(&self, indices: &[usize]) -> Tensor {
        stack_features(&self.samples, indices, self.dim)
    }
}

pub(crate) fn stack_features(samples: &[Sample], indices: &[usize], dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(indices.len() * dim);
    for &i in indices {
        data.extend_from_slice(&samples[i].feature);
    }
    Tensor::matrix(indices.len(), dim, data).expect("consistent feature dimension")
}

/// A label-disjoint partition of a labeled set.
#[derive(Clone, Debug)]
pub struct EpisodeSplit {
    pub meta_train: LabeledSet,
    pub meta_val: LabeledSet,
}

/// Uniformly partitions the classes of `labeled` into `c_mt` meta-train
/// classes and the rest as meta-validation classes.
pub fn split_episode<R: Rng + ?Sized>(
    labeled: &LabeledSet,
    c_mt: usize,
    rng: &mut R,
) -> Result<EpisodeSplit, EpisodeError> {
    let classes = labeled.num_classes();
    if c_mt == 0 || c_mt >= classes {
        return Err(EpisodeError::InvalidSplit { c_mt, classes });
    }
    let mut labels = labeled.labels();
    labels.shuffle(rng);
    let (train, val) = labels.split_at(c_mt);
    let mut train = train.to_vec();
    let mut val = val.to_vec();
    train.sort_unstable();
    val.sort_unstable();
    Ok(EpisodeSplit {
        meta_train: labeled.subset(&train)?,
        meta_val: labeled.subset(&val)?,
    })
}

/// Identifies the exact reference draw a similarity vector was computed against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BankId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Reference {
    pub label: u32,
    /// Index of the reference sample in the set it was drawn from.
    pub index: usize,
}

/// One reference sample per class, in a fixed order: coordinate `k` of a
/// similarity representation always refers to `entries[k]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReferenceBank {
    entries: Vec<Reference>,
    id: BankId,
}

impl ReferenceBank {
    pub fn new(entries: Vec<Reference>) -> Self {
        let mut h = DefaultHasher::new();
        entries.hash(&mut h);
        let id = BankId(h.finish());
        Self { entries, id }
    }

    pub fn entries(&self) -> &[Reference] {
        &self.entries
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|r| r.index).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self) -> BankId {
        self.id
    }
}

/// Draws one reference sample uniformly from each requested class, in the
/// requested order.
pub fn sample_references<R: Rng + ?Sized>(
    set: &LabeledSet,
    classes: &[u32],
    rng: &mut R,
) -> Result<ReferenceBank, EpisodeError> {
    let entries = classes
        .iter()
        .map(|&label| {
            let idx = set
                .class_indices(label)
                .ok_or(EpisodeError::MissingClass(label))?;
            let index = idx[rng.random_range(0..idx.len())];
            Ok(Reference { label, index })
        })
        .collect::<Result<Vec<_>, EpisodeError>>()?;
    Ok(ReferenceBank::new(entries))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub target: bool,
}

/// Pairs over positions of one sample batch.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PairBatch {
    pub pairs: Vec<Pair>,
}

impl PairBatch {
    pub fn index_pairs(&self) -> Vec<(usize, usize)> {
        self.pairs.iter().map(|p| (p.a, p.b)).collect()
    }

    pub fn targets(&self) -> Vec<bool> {
        self.pairs.iter().map(|p| p.target).collect()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.target).count()
    }
}

/// All unordered pairs `(i, j)`, `i < j`, over `n` positions.
pub fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push((i, j));
        }
    }
    out
}

/// Samples `p` distinct classes and `k` samples from each (with replacement
/// only when a class has fewer than `k`). Returns set indices in class-major
/// order and every within-batch pair labeled by class equality.
pub fn sample_pk_batch<R: Rng + ?Sized>(
    set: &LabeledSet,
    p: usize,
    k: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, PairBatch), EpisodeError> {
    let available = set.num_classes();
    if p == 0 || p > available {
        return Err(EpisodeError::TooManyClasses {
            requested: p,
            available,
        });
    }
    if k == 0 {
        return Err(EpisodeError::InvalidBatch {
            b: 0,
            population: set.len(),
        });
    }
    let labels = set.labels();
    let chosen = index::sample(rng, labels.len(), p);
    let mut batch = Vec::with_capacity(p * k);
    for ci in chosen.iter() {
        let idx = set.class_indices(labels[ci]).expect("label from set");
        if idx.len() >= k {
            for j in index::sample(rng, idx.len(), k).iter() {
                batch.push(idx[j]);
            }
        } else {
            for _ in 0..k {
                batch.push(idx[rng.random_range(0..idx.len())]);
            }
        }
    }
    let pairs = all_pairs(batch.len())
        .into_iter()
        .map(|(a, b)| Pair {
            a,
            b,
            target: set.label_of(batch[a]) == set.label_of(batch[b]),
        })
        .collect();
    Ok((batch, PairBatch { pairs }))
}

/// Draws `b` distinct indices from `0..population` and lists every
/// within-batch unordered pair (targets are decided later).
pub fn unlabeled_pair_batch<R: Rng + ?Sized>(
    population: usize,
    b: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<(usize, usize)>), EpisodeError> {
    if b < 2 || b > population {
        return Err(EpisodeError::InvalidBatch { b, population });
    }
    let batch = index::sample(rng, population, b).into_vec();
    Ok((batch, all_pairs(b)))
}
