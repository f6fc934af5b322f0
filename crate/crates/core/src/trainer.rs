//! Training loops.
//!
//! * Meta phase: every epoch splits the labeled classes into label-disjoint
//!   meta-train and meta-validation sets. Each step draws a meta-train batch
//!   (feature contrastive loss), one reference per meta-train class, and a
//!   meta-validation batch whose similarity representations against those
//!   references feed the similarity contrastive loss. Both terms are summed
//!   into one update.
//! * Semi phase: each step combines the feature contrastive loss on a
//!   labeled batch with λ_U times the same loss on an unlabeled batch whose
//!   pairs are pseudo-labeled by thresholding similarity-representation
//!   distances against references drawn from the labeled set.
//! * Supervised mode runs the meta loop on the full labeled set.

use std::time::Instant;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{Sample, UnlabeledPool};
use crate::embed::{adam_step, AdamConfig, AdamState, EmbedError, EmbeddingModel, LrSchedule};
use crate::episodes::{
    all_pairs, sample_pk_batch, sample_references, split_episode, stack_features, unlabeled_pair_batch,
    EpisodeError, LabeledSet, Pair, PairBatch,
};
use crate::numcore::{NumError, Tape, Tensor};
use crate::objectives::{
    pair_loss_on_tape, similarity_matrix_on_tape, similarity_rows, Margin, ObjectiveError,
    Reduction, SimilarityMeasure,
};
use crate::pseudolabel::{
    assign_pseudo_pairs, threshold_grid, PairAudit, PseudoLabelError, Threshold,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Meta,
    Semi,
    Supervised,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Meta => "meta",
            Phase::Semi => "semi",
            Phase::Supervised => "supervised",
        })
    }
}

impl std::str::FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "meta" => Ok(Phase::Meta),
            "semi" => Ok(Phase::Semi),
            "supervised" => Ok(Phase::Supervised),
            other => Err(format!("unknown phase `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub phase: Phase,
    pub epochs: usize,
    /// Labeled (and meta-train) batch size.
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub batch_meta_val: usize,
    /// Samples per class in class-balanced batches.
    pub instances_per_class: usize,
    pub lr: LrSchedule,
    pub adam: AdamConfig,
    /// Margin of the feature contrastive loss.
    pub phi: f64,
    /// Margin of the similarity contrastive loss; `None` shares `phi`.
    pub phi_sim: Option<f64>,
    /// Pseudo pair threshold.
    pub psi: f64,
    /// Number of reference classes; `None` means `⌈C_L / 2⌉`.
    pub c_mt: Option<usize>,
    pub lambda_u: f64,
    pub patience: usize,
    pub min_improvement: f64,
    pub seed: u64,
    pub measure: SimilarityMeasure,
}

impl TrainConfig {
    pub fn new(phase: Phase) -> Self {
        let lr = match phase {
            Phase::Semi => 1e-5,
            _ => 2e-5,
        };
        Self {
            phase,
            epochs: 200,
            batch_labeled: 32,
            batch_unlabeled: 64,
            batch_meta_val: 64,
            instances_per_class: 4,
            lr: LrSchedule {
                initial_lr: lr,
                decay_factor: 0.1,
                decay_every: 150,
            },
            adam: AdamConfig::default(),
            phi: 0.3,
            phi_sim: Some(1.0),
            psi: 0.3,
            c_mt: None,
            lambda_u: 1.0,
            patience: 20,
            min_improvement: 1e-4,
            seed: 0,
            measure: SimilarityMeasure::Cosine,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_labeled < 2 || self.batch_unlabeled < 2 || self.batch_meta_val < 2 {
            return bad("batch sizes must be at least 2".into());
        }
        if self.instances_per_class < 2 {
            return bad("instances_per_class must be at least 2".into());
        }
        if !(self.lambda_u >= 0.0 && self.lambda_u.is_finite()) {
            return bad(format!("lambda_u must be non-negative, got {}", self.lambda_u));
        }
        if self.patience < 1 {
            return bad("patience must be at least 1".into());
        }
        if LrSchedule::new(self.lr.initial_lr, self.lr.decay_factor, self.lr.decay_every).is_none() {
            return bad(format!("invalid learning-rate schedule {:?}", self.lr));
        }
        Margin::new(self.phi)?;
        Margin::new(self.sim_margin())?;
        Threshold::new(self.psi)?;
        Ok(())
    }

    pub fn sim_margin(&self) -> f64 {
        self.phi_sim.unwrap_or(self.phi)
    }

    fn reference_classes(&self, labeled_classes: usize) -> usize {
        self.c_mt.unwrap_or(labeled_classes.div_ceil(2))
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{operation} expects phase `{expected}`, config says `{found}`")]
    WrongPhase {
        operation: &'static str,
        expected: Phase,
        found: Phase,
    },
    #[error("unlabeled set is empty; use the supervised phase to train on labeled data alone")]
    EmptyUnlabeled,
    #[error("unlabeled sample uid {uid} has dimension {found}, labeled data has {expected}")]
    UnlabeledDim {
        uid: u64,
        expected: usize,
        found: usize,
    },
    #[error("non-finite loss in {phase} phase at epoch {epoch}, step {step} (batch uids {batch:?})")]
    NonFinite {
        phase: Phase,
        epoch: usize,
        step: usize,
        batch: Vec<u64>,
    },
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    PseudoLabel(#[from] PseudoLabelError),
}

impl From<NumError> for TrainError {
    fn from(e: NumError) -> Self {
        TrainError::Embed(EmbedError::Num(e))
    }
}

/// Per-epoch summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    /// Mean feature contrastive loss on labeled (meta-train) batches.
    pub feat_loss: f64,
    /// Mean similarity contrastive loss (meta phase only).
    pub sim_loss: Option<f64>,
    /// Mean feature contrastive loss on pseudo-labeled pairs (semi phase only).
    pub unlabeled_loss: Option<f64>,
    /// Fraction of unlabeled pairs assigned a positive pseudo label.
    pub pseudo_positive_rate: Option<f64>,
    /// Summed pair audit over the epoch, when oracle labels exist.
    pub pseudo_audit: Option<PairAudit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub labeled_loss: f64,
    pub total_loss: f64,
    pub param_digest: u64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub stopped_early: bool,
    /// Wall-clock seconds per epoch. Kept out of the serialized log so logs
    /// stay reproducible.
    #[serde(skip)]
    pub wall_seconds: Vec<f64>,
}

/// Equality ignores wall-clock timings.
impl PartialEq for TrainLog {
    fn eq(&self, other: &Self) -> bool {
        self.epochs == other.epochs
            && self.steps == other.steps
            && self.stopped_early == other.stopped_early
    }
}

impl TrainLog {
    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("epoch record serializes") + "\n")
            .collect()
    }

    /// One JSON object per optimizer step.
    pub fn steps_jsonl(&self) -> String {
        self.steps
            .iter()
            .map(|s| serde_json::to_string(s).expect("step record serializes") + "\n")
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: EmbeddingModel,
    pub optimizer: AdamState,
    pub log: TrainLog,
}

mod stream {
    pub const SPLIT: u64 = 1;
    pub const LABELED: u64 = 2;
    pub const META_VAL: u64 = 3;
    pub const REFERENCES: u64 = 4;
    pub const UNLABELED: u64 = 5;
}

fn rng_stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Class-balanced batch shape `(p classes, k per class)` for a target size.
fn pk_shape(batch: usize, classes: usize, per_class: usize) -> (usize, usize) {
    let p = (batch / per_class).clamp(1, classes.max(1));
    let k = (batch / p).max(2);
    (p, k)
}

fn check_phase(operation: &'static str, cfg: &TrainConfig, expected: Phase) -> Result<(), TrainError> {
    if cfg.phase != expected {
        return Err(TrainError::WrongPhase {
            operation,
            expected,
            found: cfg.phase,
        });
    }
    Ok(())
}

fn check_labeled(labeled: &LabeledSet, model: &EmbeddingModel) -> Result<(), TrainError> {
    labeled.require_min_per_class(2)?;
    if labeled.dim() != model.input_dim() {
        return Err(EmbedError::InputWidth {
            expected: model.input_dim(),
            found: labeled.dim(),
        }
        .into());
    }
    Ok(())
}

fn check_pool_dims(pool: &UnlabeledPool, dim: usize) -> Result<(), TrainError> {
    match pool.samples().iter().find(|s| s.feature.len() != dim) {
        Some(s) => Err(TrainError::UnlabeledDim {
            uid: s.uid,
            expected: dim,
            found: s.feature.len(),
        }),
        None => Ok(()),
    }
}

fn uids(samples: &[Sample], idx: &[usize]) -> Vec<u64> {
    idx.iter().map(|&i| samples[i].uid).collect()
}

/// Meta-learning on labeled data with label-disjoint episodes.
pub fn train_meta(
    labeled: &LabeledSet,
    cfg: &TrainConfig,
    model: EmbeddingModel,
) -> Result<TrainOutcome, TrainError> {
    check_phase("train_meta", cfg, Phase::Meta)?;
    run_meta(labeled, cfg, model)
}

/// The meta loop applied to the entire labeled set, for fully supervised use.
pub fn train_supervised(
    labeled: &LabeledSet,
    cfg: &TrainConfig,
    model: EmbeddingModel,
) -> Result<TrainOutcome, TrainError> {
    check_phase("train_supervised", cfg, Phase::Supervised)?;
    run_meta(labeled, cfg, model)
}

fn run_meta(
    labeled: &LabeledSet,
    cfg: &TrainConfig,
    mut model: EmbeddingModel,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    check_labeled(labeled, &model)?;
    let phi = Margin::new(cfg.phi)?;
    let phi_sim = Margin::new(cfg.sim_margin())?;
    let c_mt = cfg.reference_classes(labeled.num_classes());
    if c_mt == 0 || c_mt >= labeled.num_classes() {
        return Err(EpisodeError::InvalidSplit {
            c_mt,
            classes: labeled.num_classes(),
        }
        .into());
    }

    let mut split_rng = rng_stream(cfg.seed, stream::SPLIT);
    let mut train_rng = rng_stream(cfg.seed, stream::LABELED);
    let mut val_rng = rng_stream(cfg.seed, stream::META_VAL);
    let mut ref_rng = rng_stream(cfg.seed, stream::REFERENCES);

    let mut optimizer = AdamState::new(&model, cfg.adam);
    let mut log = TrainLog::default();
    let mut best = f64::INFINITY;
    let mut stale = 0usize;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let split = split_episode(labeled, c_mt, &mut split_rng)?;
        let (mt, mv) = (&split.meta_train, &split.meta_val);
        let (pt, kt) = pk_shape(cfg.batch_labeled, mt.num_classes(), cfg.instances_per_class);
        let (pv, kv) = pk_shape(cfg.batch_meta_val, mv.num_classes(), cfg.instances_per_class);
        let steps = mt.len().div_ceil(cfg.batch_labeled).max(1);
        let lr = cfg.lr.lr_at(epoch);
        let ref_classes = mt.labels();

        let (mut feat_sum, mut sim_sum) = (0.0, 0.0);
        for step in 0..steps {
            let (tidx, tpairs) = sample_pk_batch(mt, pt, kt, &mut train_rng)?;
            let bank = sample_references(mt, &ref_classes, &mut ref_rng)?;
            let (vidx, vpairs) = sample_pk_batch(mv, pv, kv, &mut val_rng)?;

            let (nt, nr, nv) = (tidx.len(), bank.len(), vidx.len());
            let mut x = mt.features(&tidx).into_data();
            x.extend(mt.features(&bank.indices()).into_data());
            x.extend(mv.features(&vidx).into_data());
            let x = Tensor::matrix(nt + nr + nv, labeled.dim(), x)?;

            let mut tape = Tape::new();
            let params = model.bind(&mut tape);
            let xv = tape.constant(x);
            let f = model.forward_on_tape(&mut tape, &params, xv)?;
            let ft = tape.select_rows(f, &(0..nt).collect::<Vec<_>>())?;
            let fr = tape.select_rows(f, &(nt..nt + nr).collect::<Vec<_>>())?;
            let fv = tape.select_rows(f, &(nt + nr..nt + nr + nv).collect::<Vec<_>>())?;

            let feat = pair_loss_on_tape(&mut tape, ft, &tpairs, phi, Reduction::Mean)?;
            let s = similarity_matrix_on_tape(&mut tape, fv, fr, cfg.measure)?;
            let sim = pair_loss_on_tape(&mut tape, s, &vpairs, phi_sim, Reduction::Mean)?;
            let total = tape.add(feat, sim)?;

            let (fl, sl) = (tape.value(feat).as_scalar()?, tape.value(sim).as_scalar()?);
            let tl = tape.value(total).as_scalar()?;
            if !tl.is_finite() {
                let mut batch = uids(mt.samples(), &tidx);
                batch.extend(uids(mv.samples(), &vidx));
                return Err(TrainError::NonFinite {
                    phase: cfg.phase,
                    epoch,
                    step,
                    batch,
                });
            }
            let grads = tape.backward(total)?;
            let grads: Vec<Tensor> = params.iter().map(|&p| grads.wrt(p)).collect();
            adam_step(&mut model, &grads, &mut optimizer, lr)?;

            feat_sum += fl;
            sim_sum += sl;
            log.steps.push(StepRecord {
                epoch,
                step,
                labeled_loss: fl,
                total_loss: tl,
                param_digest: model.digest(),
            });
        }

        let sim_mean = sim_sum / steps as f64;
        log.epochs.push(EpochRecord {
            epoch,
            lr,
            steps,
            feat_loss: feat_sum / steps as f64,
            sim_loss: Some(sim_mean),
            unlabeled_loss: None,
            pseudo_positive_rate: None,
            pseudo_audit: None,
        });
        log.wall_seconds.push(started.elapsed().as_secs_f64());

        if best - sim_mean > cfg.min_improvement {
            best = sim_mean;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log.stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        model,
        optimizer,
        log,
    })
}

/// Joint training on labeled data and pseudo-labeled unlabeled data.
pub fn train_semi(
    labeled: &LabeledSet,
    unlabeled: &UnlabeledPool,
    cfg: &TrainConfig,
    model: EmbeddingModel,
) -> Result<TrainOutcome, TrainError> {
    check_phase("train_semi", cfg, Phase::Semi)?;
    if unlabeled.is_empty() {
        return Err(TrainError::EmptyUnlabeled);
    }
    run_semi(labeled, Some(unlabeled), cfg, model)
}

/// The semi loop without any unlabeled term: feature contrastive training
/// on labeled batches only. Serves as the ablation baseline.
pub fn train_labeled_only(
    labeled: &LabeledSet,
    cfg: &TrainConfig,
    model: EmbeddingModel,
) -> Result<TrainOutcome, TrainError> {
    run_semi(labeled, None, cfg, model)
}

struct PseudoBatch {
    idx: Vec<usize>,
    pairs: PairBatch,
    audit: Option<PairAudit>,
}

fn pseudo_label_batch(
    model: &EmbeddingModel,
    labeled: &LabeledSet,
    pool: &UnlabeledPool,
    unlabeled_emb: impl FnOnce(&Tensor) -> Result<Tensor, TrainError>,
    cfg: &TrainConfig,
    c_mt: usize,
    ref_rng: &mut ChaCha8Rng,
    idx: Vec<usize>,
    candidate_pairs: &[(usize, usize)],
) -> Result<PseudoBatch, TrainError> {
    let labels = labeled.labels();
    let classes: Vec<u32> = index::sample(ref_rng, labels.len(), c_mt)
        .iter()
        .map(|i| labels[i])
        .collect();
    let bank = sample_references(labeled, &classes, ref_rng)?;
    let refs = model.forward(&labeled.features(&bank.indices()))?;
    let xu = stack_features(pool.samples(), &idx, labeled.dim());
    let fu = unlabeled_emb(&xu)?;
    let s = similarity_rows(&fu, &refs, bank.id(), cfg.measure)?;
    let pseudo = assign_pseudo_pairs(&s, candidate_pairs, Threshold::new(cfg.psi)?)?;
    let audit = match pool.oracle() {
        Some(o) => Some(o.audit(&pseudo, &idx)?),
        None => None,
    };
    let pairs = PairBatch {
        pairs: pseudo
            .pairs
            .iter()
            .map(|p| Pair {
                a: p.i,
                b: p.j,
                target: p.target,
            })
            .collect(),
    };
    Ok(PseudoBatch { idx, pairs, audit })
}

fn run_semi(
    labeled: &LabeledSet,
    unlabeled: Option<&UnlabeledPool>,
    cfg: &TrainConfig,
    mut model: EmbeddingModel,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    check_labeled(labeled, &model)?;
    let phi = Margin::new(cfg.phi)?;
    let c_mt = cfg.reference_classes(labeled.num_classes());
    if c_mt == 0 || c_mt > labeled.num_classes() {
        return Err(TrainError::Config(format!(
            "reference class count {c_mt} must lie in 1..={}",
            labeled.num_classes()
        )));
    }
    if let Some(pool) = unlabeled {
        if pool.len() < 2 {
            return Err(EpisodeError::InvalidBatch {
                b: 2,
                population: pool.len(),
            }
            .into());
        }
        check_pool_dims(pool, labeled.dim())?;
    }

    let mut train_rng = rng_stream(cfg.seed, stream::LABELED);
    let mut ref_rng = rng_stream(cfg.seed, stream::REFERENCES);
    let mut unl_rng = rng_stream(cfg.seed, stream::UNLABELED);

    let mut optimizer = AdamState::new(&model, cfg.adam);
    let mut log = TrainLog::default();
    let (p, k) = pk_shape(cfg.batch_labeled, labeled.num_classes(), cfg.instances_per_class);
    let steps = labeled.len().div_ceil(cfg.batch_labeled).max(1);
    let use_unlabeled_loss = cfg.lambda_u > 0.0;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = cfg.lr.lr_at(epoch);
        let (mut lab_sum, mut unl_sum, mut pos_rate_sum) = (0.0, 0.0, 0.0);
        let mut audit_sum: Option<PairAudit> = None;

        for step in 0..steps {
            let (lidx, lpairs) = sample_pk_batch(labeled, p, k, &mut train_rng)?;
            let nl = lidx.len();

            let mut pseudo = None;
            let mut unl_candidates = None;
            if let Some(pool) = unlabeled {
                let b = cfg.batch_unlabeled.min(pool.len());
                let (uidx, cand) = unlabeled_pair_batch(pool.len(), b, &mut unl_rng)?;
                unl_candidates = Some((pool, uidx, cand));
            }

            let mut tape = Tape::new();
            let params = model.bind(&mut tape);
            let mut x = labeled.features(&lidx).into_data();
            let mut rows = nl;
            if let (true, Some((pool, uidx, _))) = (use_unlabeled_loss, &unl_candidates) {
                x.extend(stack_features(pool.samples(), uidx, labeled.dim()).into_data());
                rows += uidx.len();
            }
            let xv = tape.constant(Tensor::matrix(rows, labeled.dim(), x)?);
            let f = model.forward_on_tape(&mut tape, &params, xv)?;
            let fl_var = if rows == nl {
                f
            } else {
                tape.select_rows(f, &(0..nl).collect::<Vec<_>>())?
            };
            let lab = pair_loss_on_tape(&mut tape, fl_var, &lpairs, phi, Reduction::Mean)?;

            let mut total = lab;
            let mut unl_loss = None;
            if let Some((pool, uidx, cand)) = unl_candidates {
                let on_tape = use_unlabeled_loss;
                let fu_var = if on_tape {
                    Some(tape.select_rows(f, &(nl..rows).collect::<Vec<_>>())?)
                } else {
                    None
                };
                let fu_value = fu_var.map(|v| tape.value(v).clone());
                let batch = pseudo_label_batch(
                    &model,
                    labeled,
                    pool,
                    |xu| match fu_value {
                        Some(v) => Ok(v),
                        None => Ok(model.forward(xu)?),
                    },
                    cfg,
                    c_mt,
                    &mut ref_rng,
                    uidx,
                    &cand,
                )?;
                if let Some(fu) = fu_var {
                    let l = pair_loss_on_tape(&mut tape, fu, &batch.pairs, phi, Reduction::Mean)?;
                    unl_loss = Some(tape.value(l).as_scalar()?);
                    let weighted = tape.scale(l, cfg.lambda_u);
                    total = tape.add(total, weighted)?;
                }
                pos_rate_sum += batch.pairs.positives() as f64 / batch.pairs.len() as f64;
                if let Some(a) = batch.audit {
                    let acc = audit_sum.get_or_insert_with(PairAudit::default);
                    acc.tp += a.tp;
                    acc.fp += a.fp;
                    acc.tn += a.tn;
                    acc.fn_ += a.fn_;
                }
                pseudo = Some(batch.idx);
            }

            let ll = tape.value(lab).as_scalar()?;
            let tl = tape.value(total).as_scalar()?;
            if !tl.is_finite() {
                let mut batch = uids(labeled.samples(), &lidx);
                if let (Some(pool), Some(idx)) = (unlabeled, &pseudo) {
                    batch.extend(uids(pool.samples(), idx));
                }
                return Err(TrainError::NonFinite {
                    phase: cfg.phase,
                    epoch,
                    step,
                    batch,
                });
            }
            let grads = tape.backward(total)?;
            let grads: Vec<Tensor> = params.iter().map(|&p| grads.wrt(p)).collect();
            adam_step(&mut model, &grads, &mut optimizer, lr)?;

            lab_sum += ll;
            if let Some(u) = unl_loss {
                unl_sum += u;
            }
            log.steps.push(StepRecord {
                epoch,
                step,
                labeled_loss: ll,
                total_loss: tl,
                param_digest: model.digest(),
            });
        }

        let n = steps as f64;
        log.epochs.push(EpochRecord {
            epoch,
            lr,
            steps,
            feat_loss: lab_sum / n,
            sim_loss: None,
            unlabeled_loss: (unlabeled.is_some() && use_unlabeled_loss).then_some(unl_sum / n),
            pseudo_positive_rate: unlabeled.is_some().then_some(pos_rate_sum / n),
            pseudo_audit: audit_sum,
        });
        log.wall_seconds.push(started.elapsed().as_secs_f64());
    }

    Ok(TrainOutcome {
        model,
        optimizer,
        log,
    })
}

/// Settings for auditing pseudo pairs over an unlabeled pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    /// Number of reference classes drawn from the labeled set.
    pub c_mt: usize,
    pub measure: SimilarityMeasure,
    /// Audit a seeded random subset of at most this many pool samples.
    pub max_samples: usize,
    pub seed: u64,
}

/// Pseudo-labels every pair of (a subset of) the unlabeled pool against one
/// reference draw from `labeled` and audits the result at each threshold of
/// `grid` using the pool's hidden labels.
pub fn audit_unlabeled(
    model: &EmbeddingModel,
    labeled: &LabeledSet,
    pool: &UnlabeledPool,
    grid: &[f64],
    cfg: &AuditConfig,
) -> Result<Vec<(f64, PairAudit)>, TrainError> {
    let thresholds = threshold_grid(grid)?;
    let oracle = pool.oracle().ok_or_else(|| {
        TrainError::Config("the unlabeled pool carries no oracle labels to audit against".into())
    })?;
    if cfg.c_mt == 0 || cfg.c_mt > labeled.num_classes() {
        return Err(TrainError::Config(format!(
            "reference class count {} must lie in 1..={}",
            cfg.c_mt,
            labeled.num_classes()
        )));
    }
    if pool.len() < 2 {
        return Err(EpisodeError::InvalidBatch {
            b: 2,
            population: pool.len(),
        }
        .into());
    }
    check_pool_dims(pool, labeled.dim())?;
    let mut rng = rng_stream(cfg.seed, stream::REFERENCES);
    let labels = labeled.labels();
    let classes: Vec<u32> = index::sample(&mut rng, labels.len(), cfg.c_mt)
        .iter()
        .map(|i| labels[i])
        .collect();
    let bank = sample_references(labeled, &classes, &mut rng)?;
    let refs = model.forward(&labeled.features(&bank.indices()))?;

    let mut idx: Vec<usize> = if pool.len() > cfg.max_samples.max(2) {
        index::sample(&mut rng, pool.len(), cfg.max_samples.max(2)).into_vec()
    } else {
        (0..pool.len()).collect()
    };
    idx.sort_unstable();
    let fu = model.forward(&stack_features(pool.samples(), &idx, labeled.dim()))?;
    let s = similarity_rows(&fu, &refs, bank.id(), cfg.measure)?;
    let pairs = all_pairs(idx.len());
    thresholds
        .into_iter()
        .map(|psi| {
            let pseudo = assign_pseudo_pairs(&s, &pairs, psi)?;
            Ok((psi.value(), oracle.audit(&pseudo, &idx)?))
        })
        .collect()
}
