//! Resolved commands, their execution, and run manifests.
//!
//! Each command is resolved into a [`Job`] holding every setting it needs,
//! so that a manifest can be replayed to reproduce the same artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use metasim::datasets::{
    export_embeddings, generate_synthetic, load_dataset, save_dataset, DataError, DatasetFile,
    Sample, SynthSpec, UnlabeledPool,
};
use metasim::embed::{load_checkpoint, save_checkpoint, Checkpoint, EmbedError, EmbeddingModel};
use metasim::episodes::LabeledSet;
use metasim::evalmetrics::{evaluate, evaluate_embeddings, EvalError, EvalReport, ProtocolConfig};
use metasim::numcore::Tensor;
use metasim::pseudolabel::{audit_table, select_threshold};
use metasim::trainer::{
    audit_unlabeled, train_meta, train_semi, train_supervised, AuditConfig, Phase, TrainConfig,
    TrainError,
};
use serde::{Deserialize, Serialize};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(e: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_USAGE,
            error: e.into(),
        }
    }

    pub fn data(e: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_DATA,
            error: e.into(),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let code = match &e {
            TrainError::NonFinite { .. } => EXIT_NUMERIC,
            TrainError::Config(_) | TrainError::WrongPhase { .. } => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Self {
            code,
            error: e.into(),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        let code = match &e {
            EvalError::NonFinite => EXIT_NUMERIC,
            EvalError::Protocol(_) | EvalError::InvalidK { .. } => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Self {
            code,
            error: e.into(),
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::data(e)
    }
}

impl From<EmbedError> for Failure {
    fn from(e: EmbedError) -> Self {
        Failure::data(e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenJob {
    pub spec: SynthSpec,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSource {
    /// A freshly initialized MLP; the input width comes from the labeled file.
    Fresh {
        hidden: Vec<usize>,
        embed_dim: usize,
        normalize: bool,
    },
    Checkpoint { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainJob {
    pub config: TrainConfig,
    pub labeled: PathBuf,
    pub unlabeled: Option<PathBuf>,
    pub model: ModelSource,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvalSource {
    Checkpoint { checkpoint: PathBuf, test: PathBuf },
    /// A dataset file whose feature columns are already embeddings.
    Embeddings { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalJob {
    pub source: EvalSource,
    pub protocol: ProtocolConfig,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditJob {
    pub checkpoint: PathBuf,
    pub labeled: PathBuf,
    pub unlabeled: PathBuf,
    pub grid: Vec<f64>,
    /// `None` resolves to half the labeled classes, rounded up.
    pub c_mt: Option<usize>,
    pub measure: metasim::objectives::SimilarityMeasure,
    pub max_samples: usize,
    pub min_precision: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportJob {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub name: String,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Job {
    Gen(GenJob),
    Train(TrainJob),
    Eval(EvalJob),
    Audit(AuditJob),
    Export(ExportJob),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Status {
    Succeeded,
    Failed { exit_code: u8, error: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub job: Job,
    pub artifacts: Vec<PathBuf>,
    pub status: Status,
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::Gen(_) => "gen",
            Job::Train(_) => "train",
            Job::Eval(_) => "eval",
            Job::Audit(_) => "audit",
            Job::Export(_) => "export",
        }
    }

    pub fn out_dir(&self) -> &Path {
        match self {
            Job::Gen(j) => &j.out_dir,
            Job::Train(j) => &j.out_dir,
            Job::Eval(j) => &j.out_dir,
            Job::Audit(j) => &j.out_dir,
            Job::Export(j) => &j.out_dir,
        }
    }

    pub fn set_out_dir(&mut self, dir: PathBuf) {
        match self {
            Job::Gen(j) => j.out_dir = dir,
            Job::Train(j) => j.out_dir = dir,
            Job::Eval(j) => j.out_dir = dir,
            Job::Audit(j) => j.out_dir = dir,
            Job::Export(j) => j.out_dir = dir,
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.out_dir().join(format!("{}.manifest.json", self.name()))
    }

    fn run(&self) -> Result<Vec<PathBuf>, Failure> {
        match self {
            Job::Gen(j) => run_gen(j),
            Job::Train(j) => run_train(j),
            Job::Eval(j) => run_eval(j),
            Job::Audit(j) => run_audit(j),
            Job::Export(j) => run_export(j),
        }
    }
}

/// Runs `job` and records a manifest next to its artifacts, whether or not
/// the job succeeded.
pub fn execute(job: &Job) -> Result<(), Failure> {
    let result = job.run();
    let (artifacts, status) = match &result {
        Ok(paths) => (paths.clone(), Status::Succeeded),
        Err(f) => (
            Vec::new(),
            Status::Failed {
                exit_code: f.code,
                error: format!("{:#}", f.error),
            },
        ),
    };
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        job: job.clone(),
        artifacts,
        status,
    };
    let written = write_manifest(&job.manifest_path(), &manifest);
    result?;
    written
}

fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    let mut text = serde_json::to_string_pretty(manifest).map_err(Failure::data)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::data(anyhow!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::data(anyhow!("{}: not a run manifest: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    if dir.as_os_str().is_empty() {
        return Ok(());
    }
    fs::create_dir_all(dir).map_err(|e| Failure::data(anyhow!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    metasim::atomic_write(path, bytes)
        .map_err(|e| Failure::data(anyhow!("{}: {e}", path.display())))
}

fn load_labeled(path: &Path) -> Result<LabeledSet, Failure> {
    let file = load_dataset(path)?;
    if !file.has_labels {
        return Err(Failure::data(anyhow!(
            "{}: labeled data must carry a label on every row",
            path.display()
        )));
    }
    LabeledSet::new(file.samples)
        .map_err(|e| Failure::data(anyhow!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<EmbeddingModel, Failure> {
    Ok(load_checkpoint(path)?.model)
}

fn run_gen(job: &GenJob) -> Result<Vec<PathBuf>, Failure> {
    job.spec.validate().map_err(Failure::usage)?;
    let data = generate_synthetic(&job.spec)?;
    let dim = job.spec.dim;
    create_dir(&job.out_dir)?;
    let files = [
        ("labeled.txt", data.labeled.samples().to_vec()),
        ("unlabeled.txt", data.unlabeled.to_samples_with_oracle()),
        ("test.txt", data.test),
    ];
    let counts = files.each_ref().map(|(_, s)| s.len());
    let mut paths = Vec::new();
    for (name, samples) in files {
        let path = job.out_dir.join(name);
        save_dataset(&path, &DatasetFile::from_samples(dim, samples))?;
        paths.push(path);
    }
    eprintln!(
        "wrote {} labeled, {} unlabeled and {} test samples to {}",
        counts[0],
        counts[1],
        counts[2],
        job.out_dir.display()
    );
    Ok(paths)
}

fn run_train(job: &TrainJob) -> Result<Vec<PathBuf>, Failure> {
    let cfg = &job.config;
    cfg.validate()?;
    let labeled = load_labeled(&job.labeled)?;
    let pool = match (&job.unlabeled, cfg.phase) {
        (Some(path), Phase::Semi) => Some(UnlabeledPool::new(load_dataset(path)?.samples)),
        (None, Phase::Semi) => {
            return Err(Failure::usage(anyhow!(
                "the semi phase needs --unlabeled"
            )))
        }
        (Some(_), _) => {
            return Err(Failure::usage(anyhow!(
                "--unlabeled is only used by the semi phase"
            )))
        }
        (None, _) => None,
    };
    if let Some(oracle) = pool.as_ref().and_then(|p| p.oracle()) {
        let labeled_classes = labeled.labels();
        if let Some(c) = oracle
            .distinct_labels()
            .into_iter()
            .find(|c| labeled_classes.contains(c))
        {
            return Err(Failure::data(anyhow!(
                "class {c} appears in both the labeled data and the unlabeled pool"
            )));
        }
    }
    let model = match &job.model {
        ModelSource::Fresh {
            hidden,
            embed_dim,
            normalize,
        } => {
            let mut sizes = vec![labeled.dim()];
            sizes.extend(hidden);
            sizes.push(*embed_dim);
            EmbeddingModel::new(&sizes, *normalize, cfg.seed).map_err(Failure::usage)?
        }
        ModelSource::Checkpoint { path } => load_model(path)?,
    };
    if model.input_dim() != labeled.dim() {
        return Err(Failure::data(anyhow!(
            "model expects {}-dimensional input, labeled data has {}",
            model.input_dim(),
            labeled.dim()
        )));
    }

    let outcome = match cfg.phase {
        Phase::Meta => train_meta(&labeled, cfg, model)?,
        Phase::Supervised => train_supervised(&labeled, cfg, model)?,
        Phase::Semi => train_semi(&labeled, pool.as_ref().expect("checked above"), cfg, model)?,
    };

    let log = &outcome.log;
    create_dir(&job.out_dir)?;
    let checkpoint = job.out_dir.join("checkpoint.json");
    let ck = Checkpoint::new(outcome.model, Some(outcome.optimizer), log.epochs.len(), cfg.seed);
    save_checkpoint(&checkpoint, &ck)?;
    let epochs = job.out_dir.join("train_log.jsonl");
    write_file(&epochs, log.to_jsonl().as_bytes())?;
    let steps = job.out_dir.join("train_steps.jsonl");
    write_file(&steps, log.steps_jsonl().as_bytes())?;

    if let Some(last) = log.epochs.last() {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
        eprintln!(
            "{} phase: {} epochs{} in {:.1}s; last epoch feat={:.6} sim={} unlabeled={}",
            cfg.phase,
            log.epochs.len(),
            if log.stopped_early { " (early stop)" } else { "" },
            log.wall_seconds.iter().sum::<f64>(),
            last.feat_loss,
            opt(last.sim_loss),
            opt(last.unlabeled_loss),
        );
    }
    Ok(vec![checkpoint, epochs, steps])
}

fn embeddings_tensor(samples: &[Sample]) -> Result<Tensor, Failure> {
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.feature.as_slice()).collect();
    Tensor::from_rows(&rows).map_err(Failure::data)
}

fn run_eval(job: &EvalJob) -> Result<Vec<PathBuf>, Failure> {
    let report = match &job.source {
        EvalSource::Checkpoint { checkpoint, test } => {
            let model = load_model(checkpoint)?;
            let test = load_dataset(test)?;
            evaluate(&model, &test.samples, &job.protocol)?
        }
        EvalSource::Embeddings { path } => {
            let file = load_dataset(path)?;
            let emb = embeddings_tensor(&file.samples)?;
            evaluate_embeddings(&emb, &file.samples, &job.protocol)?
        }
    };
    print!("{}", aligned_table(&report));
    create_dir(&job.out_dir)?;
    let kv = job.out_dir.join("report.txt");
    write_file(&kv, report.to_kv().as_bytes())?;
    let tsv = job.out_dir.join("report.tsv");
    let table = format!("{}\n{}\n", report.table_header(), report.table_row());
    write_file(&tsv, table.as_bytes())?;
    Ok(vec![kv, tsv])
}

/// Metric names above their values, each column padded to a common width.
pub fn aligned_table(report: &EvalReport) -> String {
    let header = report.table_header();
    let row = report.table_row();
    let names: Vec<&str> = header.split('\t').collect();
    let values: Vec<&str> = row.split('\t').collect();
    let width = names
        .iter()
        .chain(&values)
        .map(|s| s.len())
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    for line in [&names, &values] {
        let cells: Vec<String> = line.iter().map(|s| format!("{s:>width$}")).collect();
        writeln!(out, "{}", cells.join("  ")).expect("write to string");
    }
    out
}

fn run_audit(job: &AuditJob) -> Result<Vec<PathBuf>, Failure> {
    let model = load_model(&job.checkpoint)?;
    let labeled = load_labeled(&job.labeled)?;
    let unlabeled = load_dataset(&job.unlabeled)?;
    if !unlabeled.has_labels {
        return Err(Failure::data(anyhow!(
            "{}: no oracle labels to audit against",
            job.unlabeled.display()
        )));
    }
    let pool = UnlabeledPool::new(unlabeled.samples);
    let cfg = AuditConfig {
        c_mt: job.c_mt.unwrap_or(labeled.num_classes().div_ceil(2)),
        measure: job.measure,
        max_samples: job.max_samples,
        seed: job.seed,
    };
    let rows = audit_unlabeled(&model, &labeled, &pool, &job.grid, &cfg)?;
    let table = audit_table(&rows);
    print!("{table}");
    match select_threshold(&rows, job.min_precision) {
        Some((psi, a)) => eprintln!(
            "best recall at precision >= {}: psi={psi} precision={:.4} recall={:.4}",
            job.min_precision,
            a.precision(),
            a.recall()
        ),
        None => eprintln!("no threshold reaches precision {}", job.min_precision),
    }
    create_dir(&job.out_dir)?;
    let path = job.out_dir.join("audit.tsv");
    write_file(&path, table.as_bytes())?;
    Ok(vec![path])
}

fn run_export(job: &ExportJob) -> Result<Vec<PathBuf>, Failure> {
    let name = Path::new(&job.name);
    if name.file_name() != Some(name.as_os_str()) {
        return Err(Failure::usage(anyhow!(
            "export name `{}` must be a plain file name",
            job.name
        )));
    }
    let model = load_model(&job.checkpoint)?;
    let data = load_dataset(&job.data)?;
    if data.dim != model.input_dim() {
        return Err(Failure::data(anyhow!(
            "model expects {}-dimensional input, {} has {}",
            model.input_dim(),
            job.data.display(),
            data.dim
        )));
    }
    create_dir(&job.out_dir)?;
    let path = job.out_dir.join(name);
    export_embeddings(&model, &data.samples, &path)?;
    Ok(vec![path])
}
