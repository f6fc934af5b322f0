//! Gaussian-cluster benchmark generator with label-disjoint splits.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DataError, Sample, UnlabeledPool};
use crate::episodes::LabeledSet;

/// Parameters of a synthetic experiment.
///
/// `n_classes` training classes are split into labeled and unlabeled classes
/// by `label_fraction`; `test_classes` further classes are held out for
/// evaluation. Class means sit on a sphere of radius `separation × sigma`,
/// so two random means are about `√2 · separation · sigma` apart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub sigma: f64,
    pub seed: u64,
    pub label_fraction: f64,
    pub test_classes: usize,
    /// Number of camera ids to draw per sample; 0 disables cameras.
    pub cameras: u32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_classes: 40,
            per_class: 30,
            dim: 16,
            separation: 6.0,
            sigma: 1.0,
            seed: 1,
            label_fraction: 0.5,
            test_classes: 40,
            cameras: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let total = self.n_classes + self.test_classes;
        if self.n_classes < 2 || self.test_classes < 1 {
            return Err(DataError::TooFewClasses {
                needed: 3,
                got: total,
            });
        }
        if self.per_class < 2 {
            return Err(DataError::InvalidSpec(
                "per_class must be at least 2".into(),
            ));
        }
        if self.dim == 0 {
            return Err(DataError::InvalidSpec("dim must be positive".into()));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(DataError::InvalidSpec(format!(
                "separation must be positive, got {}",
                self.separation
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(DataError::InvalidSpec(format!(
                "sigma must be non-negative, got {}",
                self.sigma
            )));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction < 1.0) {
            return Err(DataError::InvalidRatio(self.label_fraction));
        }
        Ok(())
    }
}

/// Output of [`generate_synthetic`].
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub labeled: LabeledSet,
    pub unlabeled: UnlabeledPool,
    pub test: Vec<Sample>,
    /// Class means indexed by label, for diagnostics.
    pub means: Vec<Vec<f64>>,
}

/// Splits a class universe into labeled and unlabeled classes.
///
/// The labeled side receives `⌈ratio · C⌉` classes, clamped so both sides
/// are non-empty. Both returned lists are sorted.
pub fn split_by_label_ratio<R: Rng + ?Sized>(
    universe: &[u32],
    ratio: f64,
    rng: &mut R,
) -> Result<(Vec<u32>, Vec<u32>), DataError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DataError::InvalidRatio(ratio));
    }
    let mut classes = universe.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let c = classes.len();
    if c < 2 {
        return Err(DataError::TooFewClasses { needed: 2, got: c });
    }
    // Guard against 1/3 · 12 = 3.9999999999999996 style rounding.
    let n_labeled = ((ratio * c as f64 - 1e-9).ceil() as usize).clamp(1, c - 1);
    classes.shuffle(rng);
    let mut labeled = classes[..n_labeled].to_vec();
    let mut unlabeled = classes[n_labeled..].to_vec();
    labeled.sort_unstable();
    unlabeled.sort_unstable();
    Ok((labeled, unlabeled))
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticData, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = spec.n_classes + spec.test_classes;
    let radius = spec.separation * spec.sigma;

    let means: Vec<Vec<f64>> = (0..total)
        .map(|_| {
            let mut dir: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            dir.iter_mut().for_each(|v| *v *= radius / n);
            dir
        })
        .collect();

    let universe: Vec<u32> = (0..spec.n_classes as u32).collect();
    let (labeled_classes, _) = split_by_label_ratio(&universe, spec.label_fraction, &mut rng)?;

    let mut uid = 0u64;
    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    let mut test = Vec::new();
    for (class, mean) in means.iter().enumerate() {
        let label = class as u32;
        for _ in 0..spec.per_class {
            let feature: Vec<f64> = mean
                .iter()
                .map(|m| m + spec.sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let camera = (spec.cameras > 0).then(|| rng.random_range(0..spec.cameras));
            let s = Sample::new(uid, Some(label), camera, feature);
            uid += 1;
            if class >= spec.n_classes {
                test.push(s);
            } else if labeled_classes.binary_search(&label).is_ok() {
                labeled.push(s);
            } else {
                unlabeled.push(s);
            }
        }
    }

    Ok(SyntheticData {
        labeled: LabeledSet::new(labeled)?,
        unlabeled: UnlabeledPool::new(unlabeled),
        test,
        means,
    })
}
