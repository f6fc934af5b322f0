use super::{EvalError, GallerySet};
use crate::numcore::{dist, dot, l2_normalize, Tensor};
use crate::objectives::SimilarityMeasure;

/// Gallery entries removed from a query's ranking before ordering.
#[derive(Clone, Copy, Debug)]
pub enum Exclusion<'a> {
    None,
    /// Query `q` is gallery item `q`; drop it.
    SelfMatch,
    /// Drop gallery items sharing both the query's id and camera.
    SameCameraSameId {
        query_labels: &'a [u32],
        query_cameras: &'a [u32],
    },
}

/// Per-query gallery orderings, best match first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ranking {
    orders: Vec<Vec<usize>>,
}

impl Ranking {
    pub fn new(orders: Vec<Vec<usize>>) -> Self {
        Self { orders }
    }

    pub fn orders(&self) -> &[Vec<usize>] {
        &self.orders
    }

    pub fn num_queries(&self) -> usize {
        self.orders.len()
    }

    /// Shortest per-query ranking length.
    pub fn min_len(&self) -> usize {
        self.orders.iter().map(Vec::len).min().unwrap_or(0)
    }
}

/// Orders the admissible gallery for every query by descending similarity
/// (ascending distance for the Euclidean measure). Ties go to the lower
/// gallery index.
pub fn rank_gallery(
    queries: &Tensor,
    gallery: &GallerySet,
    measure: SimilarityMeasure,
    exclusion: Exclusion<'_>,
) -> Result<Ranking, EvalError> {
    let (q, d) = queries.require_matrix("rank_gallery")?;
    let n = gallery.len();
    if d != gallery.dim() {
        return Err(EvalError::Dim {
            expected: gallery.dim(),
            found: d,
        });
    }
    match exclusion {
        Exclusion::SelfMatch if q != n => {
            return Err(EvalError::Protocol(format!(
                "self-exclusion needs query set = gallery set ({q} queries, {n} gallery items)"
            )))
        }
        Exclusion::SameCameraSameId {
            query_labels,
            query_cameras,
        } if query_labels.len() != q || query_cameras.len() != q => {
            return Err(EvalError::Length {
                what: "query labels/cameras",
                expected: q,
                found: query_labels.len().min(query_cameras.len()),
            })
        }
        Exclusion::SameCameraSameId { .. } if gallery.cameras().is_none() => {
            return Err(EvalError::Protocol(
                "camera exclusion needs gallery camera ids".into(),
            ))
        }
        _ => {}
    }

    // Scores where larger is better.
    let score: Box<dyn Fn(&[f64], &[f64]) -> f64> = match measure {
        SimilarityMeasure::Cosine => Box::new(|a, b| dot(a, b)),
        SimilarityMeasure::NegativeEuclidean => Box::new(|a, b| -dist(a, b)),
    };
    let (qs, gs) = match measure {
        SimilarityMeasure::Cosine => (
            l2_normalize(queries, 0.0),
            l2_normalize(gallery.embeddings(), 0.0),
        ),
        SimilarityMeasure::NegativeEuclidean => (queries.clone(), gallery.embeddings().clone()),
    };
    // A zero vector normalizes to NaN under eps 0; treat its similarity as 0.
    // Adding 0.0 folds -0.0 into +0.0 so `total_cmp` sees them as a tie.
    let sanitize = |s: f64| if s.is_nan() { 0.0 } else { s + 0.0 };

    let mut orders = Vec::with_capacity(q);
    for qi in 0..q {
        let qrow = qs.row(qi);
        let mut scored: Vec<(usize, f64)> = (0..n)
            .filter(|&g| match exclusion {
                Exclusion::None => true,
                Exclusion::SelfMatch => g != qi,
                Exclusion::SameCameraSameId {
                    query_labels,
                    query_cameras,
                } => {
                    let cams = gallery.cameras().expect("checked above");
                    !(gallery.labels()[g] == query_labels[qi] && cams[g] == query_cameras[qi])
                }
            })
            .map(|g| (g, sanitize(score(qrow, gs.row(g)))))
            .collect();
        if scored.is_empty() {
            return Err(EvalError::EmptyGallery { query: qi });
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        orders.push(scored.into_iter().map(|(g, _)| g).collect());
    }
    Ok(Ranking { orders })
}

fn check_labels(ranking: &Ranking, query_labels: &[u32], gallery_labels: &[u32]) -> Result<(), EvalError> {
    if query_labels.len() != ranking.num_queries() {
        return Err(EvalError::Length {
            what: "query labels",
            expected: ranking.num_queries(),
            found: query_labels.len(),
        });
    }
    if let Some(&g) = ranking.orders.iter().flatten().find(|&&g| g >= gallery_labels.len()) {
        return Err(EvalError::Length {
            what: "gallery labels",
            expected: g + 1,
            found: gallery_labels.len(),
        });
    }
    Ok(())
}

/// 0-based position of the first same-label item in each query's ranking.
fn first_hits(ranking: &Ranking, query_labels: &[u32], gallery_labels: &[u32]) -> Vec<Option<usize>> {
    ranking
        .orders
        .iter()
        .zip(query_labels)
        .map(|(order, &ql)| order.iter().position(|&g| gallery_labels[g] == ql))
        .collect()
}

fn check_ks(ks: &[usize], limit: usize) -> Result<(), EvalError> {
    for &k in ks {
        if k == 0 || k > limit {
            return Err(EvalError::InvalidK { k, limit });
        }
    }
    Ok(())
}

/// Fraction of all queries with a same-label item in the top `k`.
pub fn recall_at_k(
    ranking: &Ranking,
    query_labels: &[u32],
    gallery_labels: &[u32],
    ks: &[usize],
) -> Result<Vec<(usize, f64)>, EvalError> {
    check_labels(ranking, query_labels, gallery_labels)?;
    check_ks(ks, gallery_labels.len())?;
    let hits = first_hits(ranking, query_labels, gallery_labels);
    let q = hits.len().max(1) as f64;
    Ok(ks
        .iter()
        .map(|&k| {
            let n = hits.iter().filter(|h| h.is_some_and(|p| p < k)).count();
            (k, n as f64 / q)
        })
        .collect())
}

/// CMC values and the number of queries left out for lacking any
/// admissible correct match.
#[derive(Clone, Debug, PartialEq)]
pub struct CmcCurve {
    pub values: Vec<(usize, f64)>,
    pub excluded: usize,
}

pub fn cmc(
    ranking: &Ranking,
    query_labels: &[u32],
    gallery_labels: &[u32],
    ranks: &[usize],
) -> Result<CmcCurve, EvalError> {
    check_labels(ranking, query_labels, gallery_labels)?;
    check_ks(ranks, gallery_labels.len())?;
    let hits: Vec<usize> = first_hits(ranking, query_labels, gallery_labels)
        .into_iter()
        .flatten()
        .collect();
    let excluded = ranking.num_queries() - hits.len();
    let values = ranks
        .iter()
        .map(|&r| {
            let v = if hits.is_empty() {
                0.0
            } else {
                hits.iter().filter(|&&p| p < r).count() as f64 / hits.len() as f64
            };
            (r, v)
        })
        .collect();
    Ok(CmcCurve { values, excluded })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeanAp {
    pub value: f64,
    pub excluded: usize,
}

/// Average precision of one relevance list.
pub fn average_precision(relevant: &[bool]) -> Option<f64> {
    let mut found = 0usize;
    let mut sum = 0.0;
    for (r, _) in relevant.iter().enumerate().filter(|(_, &rel)| rel) {
        found += 1;
        sum += found as f64 / (r + 1) as f64;
    }
    (found > 0).then(|| sum / found as f64)
}

pub fn mean_average_precision(
    ranking: &Ranking,
    query_labels: &[u32],
    gallery_labels: &[u32],
) -> Result<MeanAp, EvalError> {
    check_labels(ranking, query_labels, gallery_labels)?;
    let aps: Vec<f64> = ranking
        .orders
        .iter()
        .zip(query_labels)
        .filter_map(|(order, &ql)| {
            let rel: Vec<bool> = order.iter().map(|&g| gallery_labels[g] == ql).collect();
            average_precision(&rel)
        })
        .collect();
    let excluded = ranking.num_queries() - aps.len();
    let value = if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    };
    Ok(MeanAp { value, excluded })
}
