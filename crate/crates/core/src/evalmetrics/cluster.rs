use std::collections::BTreeMap;

use rand::Rng;

use super::EvalError;
use crate::numcore::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest center; ties go to the lower index.
fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(x, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_centers<R: Rng + ?Sized>(x: &Tensor, k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = x.rows();
    let mut centers = vec![x.row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = x.row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), &c));
        }
        centers.push(c);
    }
    centers
}

fn lloyd(x: &Tensor, mut centers: Vec<Vec<f64>>, max_iter: usize) -> KMeans {
    let (n, d) = (x.rows(), x.cols());
    let k = centers.len();
    let mut assignments = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, a) in assignments.iter_mut().enumerate() {
            let (c, _) = nearest(x.row(i), &centers);
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            sums[a].iter_mut().zip(x.row(i)).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            // Empty clusters keep their previous center.
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let mut inertia = 0.0;
    for (i, a) in assignments.iter_mut().enumerate() {
        let (c, dd) = nearest(x.row(i), &centers);
        *a = c;
        inertia += dd;
    }
    KMeans {
        assignments,
        centers,
        inertia,
    }
}

/// k-means with k-means++ seeding; the lowest-inertia run of `restarts` wins.
pub fn kmeans<R: Rng + ?Sized>(
    x: &Tensor,
    k: usize,
    restarts: usize,
    max_iter: usize,
    rng: &mut R,
) -> Result<KMeans, EvalError> {
    let (n, _) = x.require_matrix("kmeans")?;
    if k == 0 || k > n {
        return Err(EvalError::InvalidClusters { k, n });
    }
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(x, seed_centers(x, k, rng), max_iter);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// NMI between two labelings, normalized by the arithmetic mean of their
/// entropies. Zero when both entropies vanish.
pub fn nmi_from_assignments(a: &[usize], b: &[u32]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::Length {
            what: "cluster assignments",
            expected: b.len(),
            found: a.len(),
        });
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let n = a.len() as f64;
    let mut joint: BTreeMap<(usize, u32), usize> = BTreeMap::new();
    let mut ca: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cb: BTreeMap<u32, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
    }
    let ha = entropy(ca.values().copied(), n);
    let hb = entropy(cb.values().copied(), n);
    let denom = (ha + hb) / 2.0;
    if denom <= 0.0 {
        return Ok(0.0);
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &c)| {
            let pxy = c as f64 / n;
            let px = ca[&x] as f64 / n;
            let py = cb[&y] as f64 / n;
            pxy * (pxy / (px * py)).ln()
        })
        .sum();
    Ok((mi / denom).clamp(0.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NmiScore {
    pub value: f64,
    /// All points coincide, so no clustering is meaningful.
    pub degenerate: bool,
}

pub const KMEANS_RESTARTS: usize = 10;
pub const KMEANS_MAX_ITER: usize = 100;

/// Clusters `embeddings` into `n_clusters` groups and scores the grouping
/// against `labels`.
pub fn nmi<R: Rng + ?Sized>(
    embeddings: &Tensor,
    labels: &[u32],
    n_clusters: usize,
    rng: &mut R,
) -> Result<NmiScore, EvalError> {
    let (n, _) = embeddings.require_matrix("nmi")?;
    if labels.len() != n {
        return Err(EvalError::Length {
            what: "labels",
            expected: n,
            found: labels.len(),
        });
    }
    if n_clusters < 2 || n_clusters > n {
        return Err(EvalError::InvalidClusters { k: n_clusters, n });
    }
    let first = embeddings.row(0);
    if (1..n).all(|i| embeddings.row(i) == first) {
        return Ok(NmiScore {
            value: 0.0,
            degenerate: true,
        });
    }
    let km = kmeans(embeddings, n_clusters, KMEANS_RESTARTS, KMEANS_MAX_ITER, rng)?;
    Ok(NmiScore {
        value: nmi_from_assignments(&km.assignments, labels)?,
        degenerate: false,
    })
}
