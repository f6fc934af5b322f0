mod args;
mod jobs;

use std::path::Path;
use std::process::ExitCode;

use anyhow::anyhow;
use clap::Parser;
use metasim::datasets::SynthSpec;
use metasim::embed::LrSchedule;
use metasim::evalmetrics::{Protocol, ProtocolConfig, QuerySelection};
use metasim::objectives::SimilarityMeasure;
use metasim::pseudolabel::geometric_grid;
use metasim::trainer::TrainConfig;

use args::{AuditArgs, Cli, Command, EvalArgs, ExportArgs, GenArgs, TrainArgs};
use jobs::{
    execute, read_manifest, AuditJob, EvalJob, EvalSource, ExportJob, Failure, GenJob, Job,
    ModelSource, TrainJob, EXIT_USAGE,
};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let out = cli.out.as_path();
    let job = match cli.command {
        Command::Gen(a) => gen_job(a, out),
        Command::Train(a) => train_job(a, out)?,
        Command::Eval(a) => eval_job(a, out),
        Command::Audit(a) => audit_job(a, out)?,
        Command::Export(a) => export_job(a, out),
        Command::Replay(a) => {
            let mut job = read_manifest(&a.manifest)?.job;
            if let Some(dir) = a.into {
                job.set_out_dir(dir);
            }
            job
        }
    };
    execute(&job)
}

fn gen_job(a: GenArgs, out: &Path) -> Job {
    Job::Gen(GenJob {
        spec: SynthSpec {
            n_classes: a.classes,
            per_class: a.per_class,
            dim: a.dim,
            separation: a.sep,
            sigma: a.sigma,
            seed: a.seed,
            label_fraction: a.label_frac,
            test_classes: a.test_classes.unwrap_or(a.classes),
            cameras: a.cameras,
        },
        out_dir: out.to_path_buf(),
    })
}

fn train_job(a: TrainArgs, out: &Path) -> Result<Job, Failure> {
    let mut cfg = TrainConfig::new(a.phase);
    cfg.seed = a.seed;
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = a.$field { cfg.$field = v; })* };
    }
    set!(epochs, phi, psi, lambda_u, batch_labeled, batch_unlabeled, batch_meta_val, patience, measure);
    if let Some(v) = a.per_class {
        cfg.instances_per_class = v;
    }
    if a.phi_sim.is_some() {
        cfg.phi_sim = a.phi_sim;
    }
    if a.c_mt.is_some() {
        cfg.c_mt = a.c_mt;
    }
    let lr = LrSchedule::new(
        a.lr.unwrap_or(cfg.lr.initial_lr),
        a.lr_decay.unwrap_or(cfg.lr.decay_factor),
        a.lr_every.unwrap_or(cfg.lr.decay_every),
    )
    .ok_or_else(|| Failure::usage(anyhow!("invalid learning-rate schedule")))?;
    cfg.lr = lr;

    let model = match a.init {
        Some(path) => ModelSource::Checkpoint { path },
        None => ModelSource::Fresh {
            hidden: a.hidden,
            embed_dim: a.embed_dim,
            normalize: if a.normalize || a.no_normalize {
                a.normalize
            } else {
                cfg.measure == SimilarityMeasure::Cosine
            },
        },
    };
    Ok(Job::Train(TrainJob {
        config: cfg,
        labeled: a.labeled,
        unlabeled: a.unlabeled,
        model,
        out_dir: out.to_path_buf(),
    }))
}

fn eval_job(a: EvalArgs, out: &Path) -> Job {
    let source = match (a.embeddings, a.checkpoint, a.test) {
        (Some(path), _, _) => EvalSource::Embeddings { path },
        (None, Some(checkpoint), Some(test)) => EvalSource::Checkpoint { checkpoint, test },
        _ => unreachable!("clap enforces a checkpoint and test file without --embeddings"),
    };
    let queries = match (a.queries_per_class, a.query_uids) {
        (Some(n), _) => Some(QuerySelection::PerClass(n)),
        (None, Some(uids)) => Some(QuerySelection::Uids(uids)),
        (None, None) if a.protocol == Protocol::Reid => Some(QuerySelection::PerClass(1)),
        (None, None) => None,
    };
    Job::Eval(EvalJob {
        source,
        protocol: ProtocolConfig {
            protocol: a.protocol,
            measure: a.measure,
            queries,
            seed: a.seed,
        },
        out_dir: out.to_path_buf(),
    })
}

fn audit_job(a: AuditArgs, out: &Path) -> Result<Job, Failure> {
    let grid = match a.grid {
        Some(g) => g,
        None => geometric_grid(a.psi_min, a.psi_max, a.psi_steps).ok_or_else(|| {
            Failure::usage(anyhow!(
                "need --psi-min < --psi-max with at least two steps, or equal bounds with one"
            ))
        })?,
    };
    Ok(Job::Audit(AuditJob {
        checkpoint: a.checkpoint,
        labeled: a.labeled,
        unlabeled: a.unlabeled,
        grid,
        c_mt: a.c_mt,
        measure: a.measure,
        max_samples: a.max_samples,
        min_precision: a.min_precision,
        seed: a.seed,
        out_dir: out.to_path_buf(),
    }))
}

fn export_job(a: ExportArgs, out: &Path) -> Job {
    Job::Export(ExportJob {
        checkpoint: a.checkpoint,
        data: a.data,
        name: a.name,
        out_dir: out.to_path_buf(),
    })
}
