//! Pseudo pair labels for unlabeled data.
//!
//! Two unlabeled samples are declared a positive pair when their similarity
//! representations (computed against the same labeled reference bank) lie
//! strictly closer than a threshold ψ, and a negative pair otherwise.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numcore::dist;
use crate::objectives::SimilarityRepresentation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PseudoLabelError {
    #[error("threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error("similarity representations come from different reference banks")]
    MixedBanks,
    #[error("pair ({0}, {1}) references a missing sample")]
    PairOutOfRange(usize, usize),
    #[error("no oracle label for index {0}")]
    MissingLabel(usize),
    #[error("threshold grid is empty")]
    EmptyGrid,
    #[error("threshold grid must be strictly ascending (at position {0})")]
    UnsortedGrid(usize),
}

/// Pairing threshold ψ > 0.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Threshold(f64);

impl Threshold {
    pub fn new(psi: f64) -> Result<Self, PseudoLabelError> {
        if psi > 0.0 && !psi.is_nan() {
            Ok(Self(psi))
        } else {
            Err(PseudoLabelError::InvalidThreshold(psi))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoPair {
    pub i: usize,
    pub j: usize,
    pub target: bool,
    /// `‖s_i − s_j‖₂`.
    pub delta: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PseudoPairSet {
    pub pairs: Vec<PseudoPair>,
}

impl PseudoPairSet {
    pub fn predicted_positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.target).count()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn pair_deltas(
    s: &[SimilarityRepresentation],
    pairs: &[(usize, usize)],
) -> Result<Vec<f64>, PseudoLabelError> {
    if let Some(first) = s.first() {
        if s.iter().any(|x| x.bank() != first.bank() || x.len() != first.len()) {
            return Err(PseudoLabelError::MixedBanks);
        }
    }
    pairs
        .iter()
        .map(|&(i, j)| {
            let (a, b) = match (s.get(i), s.get(j)) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(PseudoLabelError::PairOutOfRange(i, j)),
            };
            Ok(dist(a.values(), b.values()))
        })
        .collect()
}

/// Labels each pair positive iff `‖s_i − s_j‖ < ψ`.
pub fn assign_pseudo_pairs(
    s: &[SimilarityRepresentation],
    pairs: &[(usize, usize)],
    psi: Threshold,
) -> Result<PseudoPairSet, PseudoLabelError> {
    let deltas = pair_deltas(s, pairs)?;
    Ok(PseudoPairSet {
        pairs: pairs
            .iter()
            .zip(deltas)
            .map(|(&(i, j), delta)| PseudoPair {
                i,
                j,
                target: delta < psi.0,
                delta,
            })
            .collect(),
    })
}

/// Confusion counts of pseudo pair labels against ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairAudit {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl PairAudit {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn predicted_positives(&self) -> usize {
        self.tp + self.fp
    }

    /// Positive-pair precision. With no predicted positives this is
    /// reported as 1 and [`Self::precision_undefined`] is set.
    pub fn precision(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fp)
    }

    pub fn precision_undefined(&self) -> bool {
        self.tp + self.fp == 0
    }

    /// Positive-pair recall; 1 when there are no true positive pairs.
    pub fn recall(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fn_)
    }

    pub fn negative_precision(&self) -> f64 {
        ratio_or_one(self.tn, self.tn + self.fn_)
    }

    pub fn negative_recall(&self) -> f64 {
        ratio_or_one(self.tn, self.tn + self.fp)
    }
}

fn ratio_or_one(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Compares pseudo labels to `label_i == label_j`. `labels` is indexed by
/// the pair indices.
pub fn audit_pairs(
    pseudo: &PseudoPairSet,
    labels: &[Option<u32>],
) -> Result<PairAudit, PseudoLabelError> {
    let label = |i: usize| {
        labels
            .get(i)
            .copied()
            .flatten()
            .ok_or(PseudoLabelError::MissingLabel(i))
    };
    let mut audit = PairAudit::default();
    for p in &pseudo.pairs {
        let same = label(p.i)? == label(p.j)?;
        match (p.target, same) {
            (true, true) => audit.tp += 1,
            (true, false) => audit.fp += 1,
            (false, false) => audit.tn += 1,
            (false, true) => audit.fn_ += 1,
        }
    }
    Ok(audit)
}

/// Validates a non-empty, strictly ascending grid of thresholds.
pub fn threshold_grid(grid: &[f64]) -> Result<Vec<Threshold>, PseudoLabelError> {
    if grid.is_empty() {
        return Err(PseudoLabelError::EmptyGrid);
    }
    if let Some(pos) = grid.windows(2).position(|w| !(w[0] < w[1])) {
        return Err(PseudoLabelError::UnsortedGrid(pos + 1));
    }
    grid.iter().map(|&psi| Threshold::new(psi)).collect()
}

/// `steps` thresholds spaced geometrically from `min` to `max` inclusive.
/// `None` unless `0 < min < max` with `steps >= 2`, or `min == max` with one
/// step.
pub fn geometric_grid(min: f64, max: f64, steps: usize) -> Option<Vec<f64>> {
    if !(min > 0.0 && max.is_finite()) || steps == 0 || min > max || (steps > 1 && min == max) {
        return None;
    }
    if steps == 1 {
        return (min == max).then(|| vec![min]);
    }
    let ratio = (max / min).ln() / (steps - 1) as f64;
    let mut grid: Vec<f64> = (0..steps).map(|i| min * (ratio * i as f64).exp()).collect();
    grid[steps - 1] = max;
    Some(grid)
}

/// Audits the pairing at every threshold of an ascending grid.
pub fn sweep_threshold(
    s: &[SimilarityRepresentation],
    pairs: &[(usize, usize)],
    labels: &[Option<u32>],
    grid: &[f64],
) -> Result<Vec<(f64, PairAudit)>, PseudoLabelError> {
    let thresholds = threshold_grid(grid)?;
    // Validate labels once up front so every grid point fails identically.
    for &(i, j) in pairs {
        for k in [i, j] {
            if labels.get(k).copied().flatten().is_none() {
                return Err(PseudoLabelError::MissingLabel(k));
            }
        }
    }
    thresholds
        .into_iter()
        .map(|psi| {
            let pseudo = assign_pseudo_pairs(s, pairs, psi)?;
            Ok((psi.0, audit_pairs(&pseudo, labels)?))
        })
        .collect()
}

/// Tab-separated sweep table with a header row.
pub fn audit_table(rows: &[(f64, PairAudit)]) -> String {
    let mut out = String::from("psi\ttp\tfp\ttn\tfn\tprecision\trecall\n");
    for (psi, a) in rows {
        writeln!(
            out,
            "{psi:?}\t{}\t{}\t{}\t{}\t{:?}\t{:?}",
            a.tp,
            a.fp,
            a.tn,
            a.fn_,
            a.precision(),
            a.recall()
        )
        .expect("write to string");
    }
    out
}

/// Picks the sweep entry with the best recall among those reaching
/// `min_precision` (ties go to the smaller ψ).
pub fn select_threshold(rows: &[(f64, PairAudit)], min_precision: f64) -> Option<(f64, PairAudit)> {
    rows.iter()
        .filter(|(_, a)| !a.precision_undefined() && a.precision() >= min_precision)
        .fold(None, |best: Option<(f64, PairAudit)>, &(psi, a)| match best {
            Some((_, b)) if b.recall() >= a.recall() => best,
            _ => Some((psi, a)),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episodes::BankId;

    fn rep(v: &[f64]) -> SimilarityRepresentation {
        SimilarityRepresentation::new(v.to_vec(), BankId(1))
    }

    #[test]
    fn identical_vectors_pair_positive() {
        let s = vec![rep(&[0.5, 0.5]), rep(&[0.5, 0.5])];
        let out = assign_pseudo_pairs(&s, &[(0, 1)], Threshold::new(0.1).unwrap()).unwrap();
        assert!(out.pairs[0].target);
        assert_eq!(out.pairs[0].delta, 0.0);
    }

    #[test]
    fn boundary_is_strict() {
        let s = vec![rep(&[0.0, 0.0]), rep(&[3.0, 4.0])];
        let out = assign_pseudo_pairs(&s, &[(0, 1)], Threshold::new(5.0).unwrap()).unwrap();
        assert_eq!(out.pairs[0].delta, 5.0);
        assert!(!out.pairs[0].target);
    }

    #[test]
    fn mixed_banks_rejected() {
        let s = vec![rep(&[0.0]), SimilarityRepresentation::new(vec![0.0], BankId(2))];
        assert_eq!(
            assign_pseudo_pairs(&s, &[(0, 1)], Threshold::new(1.0).unwrap()),
            Err(PseudoLabelError::MixedBanks)
        );
    }

    #[test]
    fn audit_counts() {
        // Six pairs with one false positive and one false negative.
        let pseudo = PseudoPairSet {
            pairs: [
                (0, 1, true),
                (2, 3, true),
                (0, 2, true),
                (1, 3, false),
                (4, 5, false),
                (0, 4, false),
            ]
            .iter()
            .map(|&(i, j, target)| PseudoPair { i, j, target, delta: 0.0 })
            .collect(),
        };
        let labels: Vec<Option<u32>> = [0, 0, 1, 1, 2, 2].iter().map(|&l| Some(l)).collect();
        let a = audit_pairs(&pseudo, &labels).unwrap();
        assert_eq!((a.tp, a.fp, a.tn, a.fn_), (2, 1, 2, 1));
        assert!((a.precision() - 2.0 / 3.0).abs() < 1e-15);
        assert!((a.recall() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(a.total(), 6);

        let mut missing = labels.clone();
        missing[5] = None;
        assert_eq!(
            audit_pairs(&pseudo, &missing),
            Err(PseudoLabelError::MissingLabel(5))
        );
    }

    #[test]
    fn no_predicted_positives_convention() {
        let pseudo = PseudoPairSet {
            pairs: vec![PseudoPair { i: 0, j: 1, target: false, delta: 1.0 }],
        };
        let a = audit_pairs(&pseudo, &[Some(3), Some(3)]).unwrap();
        assert!(a.precision_undefined());
        assert_eq!(a.precision(), 1.0);
        assert_eq!(a.recall(), 0.0);
    }

    #[test]
    fn geometric_grid_hits_both_ends() {
        let g = geometric_grid(0.01, 4.0, 5).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!((g[0], g[4]), (0.01, 4.0));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!((g[1] / g[0] - g[3] / g[2]).abs() < 1e-12);
        assert_eq!(geometric_grid(0.5, 0.5, 1), Some(vec![0.5]));
        assert_eq!(geometric_grid(2.0, 1.0, 3), None);
        assert_eq!(geometric_grid(0.0, 1.0, 3), None);
        assert_eq!(geometric_grid(0.1, 1.0, 1), None);
        assert_eq!(geometric_grid(0.1, 1.0, 0), None);
    }

    #[test]
    fn sweep_extremes_and_validation() {
        let s = vec![rep(&[0.0]), rep(&[0.4]), rep(&[2.0]), rep(&[2.1])];
        let pairs = crate::episodes::all_pairs(4);
        let labels = vec![Some(0), Some(0), Some(1), Some(1)];
        let rows = sweep_threshold(&s, &pairs, &labels, &[1e-12, 1e12]).unwrap();
        assert_eq!(rows[0].1.predicted_positives(), 0);
        assert_eq!(rows[1].1.predicted_positives(), pairs.len());
        assert_eq!(rows[1].1.recall(), 1.0);

        assert_eq!(
            sweep_threshold(&s, &pairs, &labels, &[0.5, 0.2]),
            Err(PseudoLabelError::UnsortedGrid(1))
        );
        assert_eq!(
            sweep_threshold(&s, &pairs, &labels, &[]),
            Err(PseudoLabelError::EmptyGrid)
        );
        let table = audit_table(&rows);
        assert_eq!(table.lines().count(), 3);

        let best = select_threshold(&sweep_threshold(&s, &pairs, &labels, &[0.3, 0.5, 3.0]).unwrap(), 0.9)
            .unwrap();
        assert_eq!(best.0, 0.5);
    }
}
