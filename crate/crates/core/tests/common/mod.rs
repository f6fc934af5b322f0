//! Helpers shared by the integration and acceptance tests: brute-force
//! metric oracles, gradient-check cases and small training drivers.
#![allow(dead_code)]

use metasim::datasets::{generate_synthetic, SynthSpec, SyntheticData};
use metasim::embed::EmbeddingModel;
use metasim::episodes::{all_pairs, Pair, PairBatch};
use metasim::evalmetrics::{evaluate, EvalReport, ProtocolConfig};
use metasim::numcore::{finite_diff_check, Tape, Tensor};
use metasim::objectives::{
    batch_loss, feat_contrastive, pair_loss_on_tape, sim_contrastive, similarity_matrix_on_tape,
    similarity_rows, Margin, Reduction, SimilarityMeasure,
};
use metasim::pseudolabel::{assign_pseudo_pairs, Threshold};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

// ---------------------------------------------------------------------------
// Metric oracles. Every one of them ranks by counting, never by sorting.

pub fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Larger is better. Cosine against a zero vector scores 0.
pub fn oracle_score(a: &[f64], b: &[f64], cosine: bool) -> f64 {
    if cosine {
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        a.iter().zip(b).map(|(x, y)| (x / na) * (y / nb)).sum()
    } else {
        -sq(a, b).sqrt()
    }
}

/// Position of `g` among `admissible` when ranked best-first, lower index
/// first on ties.
pub fn oracle_position(scores: &[f64], admissible: &[usize], g: usize) -> usize {
    admissible
        .iter()
        .filter(|&&h| scores[h] > scores[g] || (scores[h] == scores[g] && h < g))
        .count()
}

/// Brute-force per-query relevance lists, best match first.
pub fn oracle_relevance(
    queries: &[Vec<f64>],
    query_labels: &[u32],
    gallery: &[Vec<f64>],
    gallery_labels: &[u32],
    admissible: impl Fn(usize, usize) -> bool,
    cosine: bool,
) -> Vec<Vec<bool>> {
    queries
        .iter()
        .enumerate()
        .map(|(q, qv)| {
            let scores: Vec<f64> = gallery.iter().map(|g| oracle_score(qv, g, cosine)).collect();
            let adm: Vec<usize> = (0..gallery.len()).filter(|&g| admissible(q, g)).collect();
            let mut rel = vec![false; adm.len()];
            for &g in &adm {
                rel[oracle_position(&scores, &adm, g)] = gallery_labels[g] == query_labels[q];
            }
            rel
        })
        .collect()
}

/// Fraction of all queries with a correct match in the top `k`.
pub fn oracle_recall(rel: &[Vec<bool>], k: usize) -> f64 {
    let hits = rel.iter().filter(|r| r.iter().take(k).any(|&x| x)).count();
    hits as f64 / rel.len() as f64
}

/// CMC at `rank` over queries with at least one correct match, plus the
/// number of queries left out.
pub fn oracle_cmc(rel: &[Vec<bool>], rank: usize) -> (f64, usize) {
    let valid: Vec<&Vec<bool>> = rel.iter().filter(|r| r.contains(&true)).collect();
    let excluded = rel.len() - valid.len();
    if valid.is_empty() {
        return (0.0, excluded);
    }
    let hits = valid.iter().filter(|r| r.iter().take(rank).any(|&x| x)).count();
    (hits as f64 / valid.len() as f64, excluded)
}

/// AP straight from the definition: mean over relevant positions r of
/// (relevant items at positions ≤ r) / r.
pub fn oracle_ap(rel: &[bool]) -> Option<f64> {
    let positions: Vec<usize> = (0..rel.len()).filter(|&i| rel[i]).collect();
    if positions.is_empty() {
        return None;
    }
    let total: f64 = positions
        .iter()
        .map(|&p| {
            let upto = positions.iter().filter(|&&q| q <= p).count();
            upto as f64 / (p + 1) as f64
        })
        .sum();
    Some(total / positions.len() as f64)
}

pub fn oracle_map(rel: &[Vec<bool>]) -> (f64, usize) {
    let aps: Vec<f64> = rel.iter().filter_map(|r| oracle_ap(r)).collect();
    let excluded = rel.len() - aps.len();
    if aps.is_empty() {
        return (0.0, excluded);
    }
    (aps.iter().sum::<f64>() / aps.len() as f64, excluded)
}

/// NMI from the contingency table, with the arithmetic-mean normalization
/// written out term by term.
pub fn oracle_nmi(a: &[usize], b: &[u32]) -> f64 {
    let n = a.len() as f64;
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |&m| m as usize + 1);
    let mut table = vec![vec![0.0_f64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y as usize] += 1.0;
    }
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..kb).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let h = |m: &[f64]| -> f64 {
        m.iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| -(c / n) * (c / n).ln())
            .sum()
    };
    let mut mi = 0.0;
    for i in 0..ka {
        for j in 0..kb {
            let c = table[i][j];
            if c > 0.0 {
                mi += c / n * (n * c / (rows[i] * cols[j])).ln();
            }
        }
    }
    let denom = (h(&rows) + h(&cols)) / 2.0;
    if denom == 0.0 {
        0.0
    } else {
        mi / denom
    }
}

/// Every labeling of `n` items up to renaming (restricted growth strings).
pub fn label_patterns(n: usize) -> Vec<Vec<u32>> {
    fn grow(prefix: &mut Vec<u32>, n: usize, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let next = prefix.iter().max().map_or(0, |m| m + 1);
        for l in 0..=next {
            prefix.push(l);
            grow(prefix, n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    grow(&mut Vec::with_capacity(n), n, &mut out);
    out
}

/// Random points; with `grid` they sit on a coarse integer grid so that
/// ties are common.
pub fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize, grid: bool) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    if grid {
                        rng.random_range(-1i32..=1) as f64
                    } else {
                        rng.sample::<f64, _>(StandardNormal)
                    }
                })
                .collect()
        })
        .collect()
}

pub fn to_tensor(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

// ---------------------------------------------------------------------------
// Gradient checks through the default MLP.

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_EMBED: usize = 32;
/// Finite-difference step.
pub const FD_STEP: f64 = 1e-6;

pub struct GradCase {
    pub model: EmbeddingModel,
    pub x: Tensor,
    pub refs: Tensor,
    pub pairs: PairBatch,
    pub unlabeled: Tensor,
    pub measure: SimilarityMeasure,
    pub phi: Margin,
    pub phi_sim: Margin,
    pub psi: f64,
    pub lambda_u: f64,
}

impl GradCase {
    /// Draws a random configuration: input width, batch, labels, measure,
    /// margins and normalization all vary with `seed`.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_in = rng.random_range(2..=6);
        let normalize = rng.random_bool(0.5);
        let sizes = [d_in, DEFAULT_HIDDEN, DEFAULT_EMBED];
        let model = EmbeddingModel::new(&sizes, normalize, seed).unwrap();
        let b = rng.random_range(3..=6);
        let c = rng.random_range(2..=4);
        let gauss = |rng: &mut ChaCha8Rng, n: usize| {
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d_in).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            to_tensor(&rows)
        };
        let x = gauss(&mut rng, b);
        let refs = gauss(&mut rng, c);
        let unlabeled = gauss(&mut rng, b);
        let labels: Vec<u32> = (0..b).map(|_| rng.random_range(0..2)).collect();
        let pairs = PairBatch {
            pairs: all_pairs(b)
                .into_iter()
                .map(|(a, bb)| Pair {
                    a,
                    b: bb,
                    target: labels[a] == labels[bb],
                })
                .collect(),
        };
        let measure = if rng.random_bool(0.5) {
            SimilarityMeasure::Cosine
        } else {
            SimilarityMeasure::NegativeEuclidean
        };
        GradCase {
            model,
            x,
            refs,
            pairs,
            unlabeled,
            measure,
            phi: Margin::new(rng.random_range(0.1..2.0)).unwrap(),
            phi_sim: Margin::new(rng.random_range(0.1..3.0)).unwrap(),
            psi: rng.random_range(0.05..2.0),
            lambda_u: rng.random_range(0.1..2.0),
        }
    }

    fn with(&self, params: &[Tensor]) -> EmbeddingModel {
        EmbeddingModel::from_params(
            self.model.sizes(),
            params.to_vec(),
            self.model.normalize_output(),
        )
        .unwrap()
    }

    fn rows(t: &Tensor) -> Vec<Tensor> {
        (0..t.rows()).map(|i| Tensor::vector(t.row(i).to_vec())).collect()
    }

    /// Feature contrastive loss, evaluated without the tape.
    fn feat_value(&self, model: &EmbeddingModel, x: &Tensor, pairs: &PairBatch) -> f64 {
        let f = Self::rows(&model.forward(x).unwrap());
        batch_loss(
            pairs,
            |p| feat_contrastive(&f[p.a], &f[p.b], p.target, self.phi),
            Reduction::Mean,
        )
        .unwrap()
    }

    /// Similarity contrastive loss on representations against the embedded
    /// references, evaluated without the tape.
    fn sim_value(&self, model: &EmbeddingModel) -> f64 {
        let f = model.forward(&self.x).unwrap();
        let r = model.forward(&self.refs).unwrap();
        let s = similarity_rows(&f, &r, metasim::episodes::BankId(7), self.measure).unwrap();
        batch_loss(
            &self.pairs,
            |p| sim_contrastive(&s[p.a], &s[p.b], p.target, self.phi_sim),
            Reduction::Mean,
        )
        .unwrap()
    }

    /// Pseudo pairs over the unlabeled rows, fixed from the current weights.
    fn pseudo_pairs(&self) -> PairBatch {
        let f = self.model.forward(&self.unlabeled).unwrap();
        let r = self.model.forward(&self.refs).unwrap();
        let s = similarity_rows(&f, &r, metasim::episodes::BankId(7), self.measure).unwrap();
        let pseudo =
            assign_pseudo_pairs(&s, &all_pairs(f.rows()), Threshold::new(self.psi).unwrap())
                .unwrap();
        PairBatch {
            pairs: pseudo
                .pairs
                .iter()
                .map(|p| Pair {
                    a: p.i,
                    b: p.j,
                    target: p.target,
                })
                .collect(),
        }
    }

    fn tape_grads(&self, build: impl Fn(&mut Tape, &[metasim::numcore::Var]) -> metasim::numcore::Var) -> Vec<Tensor> {
        let mut tape = Tape::new();
        let params = self.model.bind(&mut tape);
        let loss = build(&mut tape, &params);
        let grads = tape.backward(loss).unwrap();
        params.iter().map(|&p| grads.wrt(p)).collect()
    }

    /// Worst finite-difference error of the feature contrastive loss.
    pub fn check_feat(&self) -> f64 {
        let analytic = self.tape_grads(|tape, params| {
            let x = tape.constant(self.x.clone());
            let f = self.model.forward_on_tape(tape, params, x).unwrap();
            pair_loss_on_tape(tape, f, &self.pairs, self.phi, Reduction::Mean).unwrap()
        });
        finite_diff_check(
            |p| self.feat_value(&self.with(p), &self.x, &self.pairs),
            self.model.params(),
            &analytic,
            FD_STEP,
        )
    }

    /// Worst finite-difference error of the similarity contrastive loss
    /// composed with the similarity representation.
    pub fn check_sim(&self) -> f64 {
        let analytic = self.tape_grads(|tape, params| {
            let x = tape.constant(self.x.clone());
            let r = tape.constant(self.refs.clone());
            let f = self.model.forward_on_tape(tape, params, x).unwrap();
            let fr = self.model.forward_on_tape(tape, params, r).unwrap();
            let s = similarity_matrix_on_tape(tape, f, fr, self.measure).unwrap();
            pair_loss_on_tape(tape, s, &self.pairs, self.phi_sim, Reduction::Mean).unwrap()
        });
        finite_diff_check(
            |p| self.sim_value(&self.with(p)),
            self.model.params(),
            &analytic,
            FD_STEP,
        )
    }

    /// Worst finite-difference error of the semi-supervised objective:
    /// labeled feature loss plus weighted feature loss on pseudo pairs.
    pub fn check_semi(&self) -> f64 {
        let pseudo = self.pseudo_pairs();
        let analytic = self.tape_grads(|tape, params| {
            let x = tape.constant(self.x.clone());
            let u = tape.constant(self.unlabeled.clone());
            let f = self.model.forward_on_tape(tape, params, x).unwrap();
            let fu = self.model.forward_on_tape(tape, params, u).unwrap();
            let l = pair_loss_on_tape(tape, f, &self.pairs, self.phi, Reduction::Mean).unwrap();
            let lu = pair_loss_on_tape(tape, fu, &pseudo, self.phi, Reduction::Mean).unwrap();
            let lu = tape.scale(lu, self.lambda_u);
            tape.add(l, lu).unwrap()
        });
        finite_diff_check(
            |p| {
                let m = self.with(p);
                self.feat_value(&m, &self.x, &self.pairs)
                    + self.lambda_u * self.feat_value(&m, &self.unlabeled, &pseudo)
            },
            self.model.params(),
            &analytic,
            FD_STEP,
        )
    }
}

// ---------------------------------------------------------------------------
// Synthetic experiments.

pub fn synth(seed: u64, separation: f64) -> SyntheticData {
    generate_synthetic(&SynthSpec {
        seed,
        separation,
        ..SynthSpec::default()
    })
    .unwrap()
}

pub fn default_model(data: &SyntheticData, seed: u64) -> EmbeddingModel {
    EmbeddingModel::new(
        &[data.labeled.dim(), DEFAULT_HIDDEN, DEFAULT_EMBED],
        true,
        seed,
    )
    .unwrap()
}

pub fn retrieval(model: &EmbeddingModel, data: &SyntheticData) -> EvalReport {
    evaluate(model, &data.test, &ProtocolConfig::retrieval()).unwrap()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

// ---------------------------------------------------------------------------
// Exhaustive metric comparison over small instances.

use metasim::evalmetrics::{
    cmc, mean_average_precision, nmi_from_assignments, rank_gallery, recall_at_k, Exclusion,
    GallerySet,
};

#[derive(Debug, Default)]
pub struct MetricSweep {
    pub instances: usize,
    pub worst: f64,
    pub mismatched_exclusions: usize,
}

impl MetricSweep {
    fn record(&mut self, got: f64, want: f64) {
        self.worst = self.worst.max((got - want).abs());
    }
}

/// Compares every metric against its brute-force oracle for all label
/// patterns on `n = 2..=max_n` items, in retrieval mode (cosine, self
/// excluded) and in re-ID mode (Euclidean, query/gallery split, camera
/// exclusion).
pub fn exhaustive_metric_sweep(max_n: usize) -> MetricSweep {
    let mut sweep = MetricSweep::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for n in 2..=max_n {
        let patterns = label_patterns(n);
        for (pi, labels) in patterns.iter().enumerate() {
            let points = random_points(&mut rng, n, 2, pi % 2 == 0);
            retrieval_case(&mut sweep, &points, labels);
            let cams: Vec<u32> = (0..n).map(|_| rng.random_range(0..2)).collect();
            reid_case(&mut sweep, &points, labels, &cams);
            let clusters: Vec<usize> = patterns[(pi * 7 + 3) % patterns.len()]
                .iter()
                .map(|&c| c as usize)
                .collect();
            let got = nmi_from_assignments(&clusters, labels).unwrap();
            sweep.record(got, oracle_nmi(&clusters, labels));
            sweep.instances += 1;
        }
    }
    sweep
}

fn retrieval_case(sweep: &mut MetricSweep, points: &[Vec<f64>], labels: &[u32]) {
    let n = points.len();
    let gallery = GallerySet::new(to_tensor(points), labels.to_vec(), None).unwrap();
    let ranking = rank_gallery(
        gallery.embeddings(),
        &gallery,
        SimilarityMeasure::Cosine,
        Exclusion::SelfMatch,
    )
    .unwrap();
    let rel = oracle_relevance(points, labels, points, labels, |q, g| q != g, true);
    compare(sweep, &ranking, labels, labels, &rel, n);
}

fn reid_case(sweep: &mut MetricSweep, points: &[Vec<f64>], labels: &[u32], cams: &[u32]) {
    // Even positions are queries, odd positions the gallery.
    let q_idx: Vec<usize> = (0..points.len()).step_by(2).collect();
    let g_idx: Vec<usize> = (1..points.len()).step_by(2).collect();
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<u32>, Vec<u32>) {
        (
            idx.iter().map(|&i| points[i].clone()).collect(),
            idx.iter().map(|&i| labels[i]).collect(),
            idx.iter().map(|&i| cams[i]).collect(),
        )
    };
    let (qp, ql, qc) = pick(&q_idx);
    let (gp, gl, gc) = pick(&g_idx);
    let gallery = GallerySet::new(to_tensor(&gp), gl.clone(), Some(gc.clone())).unwrap();
    let admissible = |q: usize, g: usize| !(gl[g] == ql[q] && gc[g] == qc[q]);
    let rel = oracle_relevance(&qp, &ql, &gp, &gl, admissible, false);
    let result = rank_gallery(
        &to_tensor(&qp),
        &gallery,
        SimilarityMeasure::NegativeEuclidean,
        Exclusion::SameCameraSameId {
            query_labels: &ql,
            query_cameras: &qc,
        },
    );
    let oracle_empty = rel.iter().any(|r| r.is_empty());
    match result {
        Ok(ranking) if !oracle_empty => compare(sweep, &ranking, &ql, &gl, &rel, gp.len()),
        Err(_) if oracle_empty => {}
        _ => sweep.mismatched_exclusions += 1,
    }
}

fn compare(
    sweep: &mut MetricSweep,
    ranking: &metasim::evalmetrics::Ranking,
    ql: &[u32],
    gl: &[u32],
    rel: &[Vec<bool>],
    gallery_len: usize,
) {
    let ks: Vec<usize> = (1..=gallery_len).collect();
    let recall = recall_at_k(ranking, ql, gl, &ks).unwrap();
    for &(k, v) in &recall {
        sweep.record(v, oracle_recall(rel, k));
    }
    let curve = cmc(ranking, ql, gl, &ks).unwrap();
    for &(r, v) in &curve.values {
        let (want, excluded) = oracle_cmc(rel, r);
        sweep.record(v, want);
        if excluded != curve.excluded {
            sweep.mismatched_exclusions += 1;
        }
    }
    let map = mean_average_precision(ranking, ql, gl).unwrap();
    let (want, excluded) = oracle_map(rel);
    sweep.record(map.value, want);
    if excluded != map.excluded {
        sweep.mismatched_exclusions += 1;
    }
}

// ---------------------------------------------------------------------------
// Pseudo-label consistency.

use metasim::objectives::SimilarityRepresentation;
use metasim::pseudolabel::sweep_threshold;

#[derive(Debug, Default)]
pub struct PseudoCheck {
    pub pairs_checked: usize,
    pub label_mismatches: usize,
    pub non_monotone_steps: usize,
}

/// Random similarity representations and an ascending grid; every pseudo
/// label is compared with a direct evaluation of the distance rule and the
/// positive counts are checked along the grid.
pub fn pseudo_label_check(seed: u64) -> PseudoCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..40);
    let c = rng.random_range(1..8);
    let bank = metasim::episodes::BankId(seed);
    let s: Vec<SimilarityRepresentation> = (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
            SimilarityRepresentation::new(v, bank)
        })
        .collect();
    let labels: Vec<Option<u32>> = (0..n).map(|_| Some(rng.random_range(0..4))).collect();
    let mut grid: Vec<f64> = (0..rng.random_range(1..12))
        .map(|_| rng.random_range(1e-3..3.0))
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let pairs = all_pairs(n);

    let mut check = PseudoCheck::default();
    let mut last_positive = 0;
    for (step, &psi) in grid.iter().enumerate() {
        let pseudo = assign_pseudo_pairs(&s, &pairs, Threshold::new(psi).unwrap()).unwrap();
        for p in &pseudo.pairs {
            let d = sq(s[p.i].values(), s[p.j].values()).sqrt();
            check.pairs_checked += 1;
            if p.target != (d < psi) {
                check.label_mismatches += 1;
            }
        }
        let positives = pseudo.predicted_positives();
        if step > 0 && positives < last_positive {
            check.non_monotone_steps += 1;
        }
        last_positive = positives;
    }
    let sweep = sweep_threshold(&s, &pairs, &labels, &grid).unwrap();
    if sweep
        .windows(2)
        .any(|w| w[1].1.predicted_positives() < w[0].1.predicted_positives())
    {
        check.non_monotone_steps += 1;
    }
    check
}
