//! Cross-validated experiments and hyperparameter sweeps.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_model;
use crate::config::RunConfig;
use crate::data::{folds_for_speakers, load_examples, load_manifest, Example};
use crate::error::{Error, Result};
use crate::eval::{aggregate, evaluate_fold, EvalReport, FoldEval, Predictions};
use crate::model::Model;
use crate::peft::{count_params, ParamCounts, PeftConfig, PeftKind, PeftState};
use crate::trainer::{predict, train, TrainReport};

/// Loads the manifest named in the config, resolving feature paths against
/// the manifest's directory.
pub fn load_dataset(cfg: &RunConfig) -> Result<Vec<Example>> {
    let manifest = cfg
        .data
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Usage("no data.manifest configured".into()))?;
    let path = Path::new(manifest);
    let entries = load_manifest(path)?;
    if entries.is_empty() {
        return Err(Error::Data(format!("{manifest}: manifest is empty")));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    load_examples(&entries, base, cfg.data.frame_rate, cfg.data.max_seconds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub fold: usize,
    pub seed: u64,
    pub train: TrainReport,
    pub test: FoldEval,
    pub backbone_checksum: String,
    pub backbone_unchanged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub peft: PeftConfig,
    pub counts: ParamCounts,
    pub runs: Vec<RunRecord>,
    pub eval: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub wall_seconds: f64,
    pub per_run_seconds: Vec<f64>,
}

pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub metadata: RunMetadata,
    /// Selected model of each run, in `report.runs` order.
    pub models: Vec<Model>,
}

fn subset(examples: &[Example], idx: &[usize]) -> Vec<Example> {
    idx.iter().map(|&i| examples[i].clone()).collect()
}

/// Trains and tests one model per (fold, seed). Checkpoints go under
/// `checkpoint_root/fold{F}_seed{S}` when a root is given.
pub fn run_experiment(
    cfg: &RunConfig,
    examples: &[Example],
    checkpoint_root: Option<&Path>,
) -> Result<ExperimentOutput> {
    let started = Instant::now();
    let bb = cfg.backbone()?;
    let head = cfg.head(&bb);
    let speakers: Vec<&str> = examples.iter().map(|e| e.speaker.as_str()).collect();
    let folds = folds_for_speakers(&speakers, &cfg.data.scheme)?;

    let mut runs = Vec::new();
    let mut models = Vec::new();
    let mut fold_evals = Vec::new();
    let mut pooled = Predictions::default();
    let mut per_run_seconds = Vec::new();
    for fold in &folds {
        let (train_set, val_set, test_set) = (
            subset(examples, &fold.train),
            subset(examples, &fold.val),
            subset(examples, &fold.test),
        );
        for seed in cfg.seeds() {
            let model = Model::new(bb, cfg.peft, head, seed)?;
            let checksum = model.backbone.checksum();
            let mut outcome = train(model, &train_set, &val_set, cfg.train_config(seed))?;
            let unchanged = outcome.model.backbone.checksum() == checksum;
            if !unchanged {
                log::error!(
                    "fold {} seed {seed}: backbone weights changed during training",
                    fold.index
                );
            }
            let preds = predict(&outcome.model, &test_set)?;
            let test = evaluate_fold(fold.index, &preds, head.n_classes)?;
            pooled.extend(&preds);
            if let Some(root) = checkpoint_root {
                let name = format!("fold{}_seed{seed}", fold.index);
                save_model(&root.join(&name), &outcome.model)?;
                let rel = root
                    .file_name()
                    .map(|r| Path::new(r).join(&name))
                    .unwrap_or_else(|| name.clone().into());
                outcome.report.checkpoint = Some(rel.to_string_lossy().into_owned());
            }
            log::info!(
                "fold {} seed {seed}: best validation UAR {:.2} at epoch {}, test UAR {:.2}",
                fold.index,
                outcome.report.best_val_uar,
                outcome.report.best_epoch,
                test.uar
            );
            per_run_seconds.push(outcome.wall_seconds);
            fold_evals.push(test.clone());
            runs.push(RunRecord {
                fold: fold.index,
                seed,
                train: outcome.report,
                test,
                backbone_checksum: checksum,
                backbone_unchanged: unchanged,
            });
            models.push(outcome.model);
        }
    }
    let eval = aggregate(&fold_evals, Some(&pooled))?;
    Ok(ExperimentOutput {
        report: ExperimentReport {
            peft: cfg.peft,
            counts: count_params(&bb, &cfg.peft, &head),
            runs,
            eval,
        },
        metadata: RunMetadata {
            wall_seconds: started.elapsed().as_secs_f64(),
            per_run_seconds,
        },
        models,
    })
}

/// Grid over the size parameter of one PEFT kind.
pub fn grid(kind: PeftKind, values: &[usize]) -> Result<Vec<PeftConfig>> {
    if kind == PeftKind::None && !values.is_empty() {
        return Err(Error::Usage("kind none has no size parameter to sweep".into()));
    }
    values
        .iter()
        .map(|&v| {
            let mut p = PeftConfig::new(kind);
            match kind {
                PeftKind::Adapter | PeftKind::ParallelAdapter => p.bottleneck = v,
                PeftKind::Prompt => p.prompt_len = v,
                PeftKind::Lora => p.rank = v,
                PeftKind::None => {}
            }
            p.validate()?;
            Ok(p)
        })
        .collect()
}

/// The prompt-length, bottleneck, and rank grids studied for the head.
pub fn default_grids() -> Vec<(PeftKind, Vec<usize>)> {
    vec![
        (PeftKind::Prompt, vec![1, 3, 5]),
        (PeftKind::Adapter, vec![32, 64, 128]),
        (PeftKind::Lora, vec![8, 16, 32]),
    ]
}

pub fn point_key(p: &PeftConfig) -> String {
    match p.size_param() {
        Some((name, v)) => format!("{}_{name}{v}", p.kind),
        None => p.kind.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub key: String,
    pub peft: PeftConfig,
    pub peft_trainable: usize,
    pub peft_instantiated: usize,
    pub report: Option<ExperimentReport>,
    pub error: Option<String>,
}

/// Runs one experiment per grid point with up to `jobs` in flight. A failing
/// point is recorded in its entry and does not stop the others.
pub fn sweep(
    base: &RunConfig,
    points: &[PeftConfig],
    examples: &[Example],
    jobs: usize,
    checkpoint_root: Option<&Path>,
) -> Result<Vec<SweepEntry>> {
    if points.is_empty() {
        return Err(Error::Usage("sweep grid is empty".into()));
    }
    let bb = base.backbone()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?;
    let run_point = |p: &PeftConfig| -> SweepEntry {
        let key = point_key(p);
        let instantiated = PeftState::new(&bb, p, 0).map(|s| s.trainable_count()).unwrap_or(0);
        let mut cfg = base.clone();
        cfg.peft = *p;
        let root = checkpoint_root.map(|r| r.join(&key));
        let result = run_experiment(&cfg, examples, root.as_deref());
        let (report, error) = match result {
            Ok(out) => (Some(out.report), None),
            Err(e) => {
                log::error!("sweep point {key} failed: {e}");
                (None, Some(e.to_string()))
            }
        };
        SweepEntry {
            key,
            peft: *p,
            peft_trainable: p.trainable_count(&bb),
            peft_instantiated: instantiated,
            report,
            error,
        }
    };
    Ok(pool.install(|| points.par_iter().map(run_point).collect()))
}
