//! Experiment drivers behind the CLI subcommands: full runs,
//! checkpoint train/eval, and the density/masking sweeps.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::grid::{grid_search, GridAxes, GridOutcome, TrialRow};
use super::prep::{prep_point, text_artifacts, TextArtifacts};
use super::report::{write_reports, ReportPaths};
use super::{ExperimentConfig, HarnessError, SweepRetune};
use crate::corpus::{load_interactions, Part, SplitDataset};
use crate::eval::{
    bucket_improvement, density_sweep, hit_rate_at_1, mask_sweep, mse, DensityPoint, MaskPoint,
    MetricReport,
};
use crate::models::{
    build_model, evaluate_part, predict_part, score_one, Model, ModelKind, TrainConfig, TrainInputs,
};

/// Per-trial record kept for the trials CSV.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub k_core: u32,
    pub mask_pct: f64,
    pub model: ModelKind,
    pub seed: u64,
    pub row: TrialRow,
}

pub struct ExperimentOutput {
    pub reports: Vec<MetricReport>,
    pub trials: Vec<TrialRecord>,
    pub paths: Option<ReportPaths>,
}

fn inputs_for(kind: ModelKind, arts: &TextArtifacts) -> TrainInputs {
    TrainInputs {
        docs: kind.doc_layout().map(|layout| match layout {
            crate::text::DocLayout::Concat => Arc::clone(&arts.docs_concat),
            crate::text::DocLayout::PerReview => Arc::clone(&arts.docs_per_review),
        }),
        embeddings: kind.uses_text().then(|| Arc::clone(&arts.embeddings)),
        vocab: Some(Arc::clone(&arts.vocab)),
    }
}

fn sweep_axes(cfg: &ExperimentConfig) -> GridAxes {
    match cfg.sweep_retune {
        SweepRetune::Fixed => {
            GridAxes::single(cfg.latent_dims[0], cfg.l2_weights[0], cfg.dropouts[0])
        }
        SweepRetune::Reduced => GridAxes {
            latent_dims: cfg.latent_dims.iter().take(2).copied().collect(),
            l2_weights: cfg.l2_weights.iter().take(2).copied().collect(),
            dropouts: cfg.dropouts.iter().take(1).copied().collect(),
        },
        SweepRetune::Full => GridAxes {
            latent_dims: cfg.latent_dims.clone(),
            l2_weights: cfg.l2_weights.clone(),
            dropouts: cfg.dropouts.clone(),
        },
    }
}

fn full_axes(cfg: &ExperimentConfig) -> GridAxes {
    GridAxes {
        latent_dims: cfg.latent_dims.clone(),
        l2_weights: cfg.l2_weights.clone(),
        dropouts: cfg.dropouts.clone(),
    }
}

fn metric_report(
    cfg: &ExperimentConfig,
    grid: &GridOutcome,
    split: &SplitDataset,
    bias_preds: &[f64],
    dataset_hash: &str,
    k_core: u32,
    mask_pct: f64,
    seed: u64,
) -> Result<MetricReport, HarnessError> {
    let model: &dyn Model = grid.model.as_ref();
    let test_preds = predict_part(model, split, Part::Test)?;
    let truths: Vec<f64> = split.test().iter().map(|it| it.rating).collect();
    let test_mse = mse(&test_preds, &truths)?;
    let hr_at_1 = cfg.hr_eval.then(|| {
        hit_rate_at_1(
            |u, i| score_one(model, u, i).unwrap_or(f64::MIN),
            split,
            seed,
        )
    });
    let buckets = bucket_improvement(&test_preds, bias_preds, split)?;
    Ok(MetricReport {
        dataset_hash: dataset_hash.to_string(),
        model: model.kind(),
        config_id: grid.best_config.config_id(),
        latent_dim: grid.best_config.latent_dim,
        l2: grid.best_config.l2,
        dropout: grid.best_config.dropout,
        seed,
        k_core,
        mask_pct,
        val_mse: grid.outcome.best_val_mse,
        test_mse,
        hr_at_1,
        buckets,
    })
}

/// Trains and scores every configured model on one prepared point.
fn point_reports(
    cfg: &ExperimentConfig,
    split: &SplitDataset,
    arts: &TextArtifacts,
    dataset_hash: &str,
    k_core: u32,
    mask_pct: f64,
    axes: &GridAxes,
) -> Result<(Vec<MetricReport>, Vec<TrialRecord>), HarnessError> {
    let mut reports = Vec::new();
    let mut trials = Vec::new();
    for &seed in &cfg.seeds {
        let base = cfg.train_config(
            axes.latent_dims[0],
            axes.l2_weights[0],
            axes.dropouts[0],
            seed,
        );
        // the bias baseline anchors the bucket-improvement curves
        let bias_grid = grid_search(
            ModelKind::Bias,
            split,
            &inputs_for(ModelKind::Bias, arts),
            axes,
            &base,
            cfg.max_jobs,
        )?;
        let bias_preds = predict_part(bias_grid.model.as_ref(), split, Part::Test)?;

        for &kind in &cfg.models {
            let owned;
            let grid = if kind == ModelKind::Bias {
                &bias_grid
            } else {
                owned = grid_search(
                    kind,
                    split,
                    &inputs_for(kind, arts),
                    axes,
                    &base,
                    cfg.max_jobs,
                )?;
                &owned
            };
            for trial in &grid.trials {
                trials.push(TrialRecord {
                    k_core,
                    mask_pct,
                    model: kind,
                    seed,
                    row: trial.clone(),
                });
            }
            reports.push(metric_report(
                cfg,
                grid,
                split,
                &bias_preds,
                dataset_hash,
                k_core,
                mask_pct,
                seed,
            )?);
        }
    }
    Ok((reports, trials))
}

/// Full experiment: every (k, mask) point × model × seed, with grid
/// search on the full configured axes; writes the report CSVs.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    cfg.validate()?;
    let axes = full_axes(cfg);
    let mut reports = Vec::new();
    let mut trials = Vec::new();
    for &k in &cfg.k_cores {
        for &mask in &cfg.mask_pcts {
            let prepared = prep_point(cfg, k, mask)?;
            let (mut r, mut t) = point_reports(
                cfg,
                &prepared.split,
                &prepared.arts,
                &prepared.dataset_hash,
                k,
                mask,
                &axes,
            )?;
            reports.append(&mut r);
            trials.append(&mut t);
        }
    }
    let paths = write_reports(cfg, &reports, &trials)?;
    Ok(ExperimentOutput {
        reports,
        trials,
        paths: Some(paths),
    })
}

/// Density sweep: k = 0, 1, 2, … until the core is empty, re-tuning
/// per point according to the configured policy.
pub fn run_density_sweep(cfg: &ExperimentConfig) -> Result<Vec<DensityPoint>, HarnessError> {
    cfg.validate()?;
    let (raw, _) = load_interactions(&cfg.dataset, &cfg.load_options())?;
    let raw = Arc::new(raw);
    let axes = sweep_axes(cfg);
    density_sweep(&raw, cfg.split_seed, |k, split| {
        let arts = text_artifacts(cfg, split)?;
        let hash = split.data().content_hash();
        let (reports, _) = point_reports(cfg, split, &arts, &hash, k, 0.0, &axes)?;
        Ok(reports)
    })
}

/// Masking sweep over the configured percentages; text artifacts are
/// rebuilt from the masked training set at every point.
pub fn run_mask_sweep(cfg: &ExperimentConfig) -> Result<Vec<MaskPoint>, HarnessError> {
    cfg.validate()?;
    let k = cfg.k_cores[0];
    let prepared = prep_point(cfg, k, 0.0)?;
    let axes = sweep_axes(cfg);
    mask_sweep(
        &prepared.split,
        &cfg.mask_pcts,
        cfg.mask_seed,
        |pct, masked| {
            let arts = text_artifacts(cfg, masked)?;
            let hash = masked.data().content_hash();
            let (reports, _) = point_reports(cfg, masked, &arts, &hash, k, pct, &axes)?;
            Ok(reports)
        },
    )
}

/// Checkpoint sidecar: refuses evaluation when the data changed.
#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub schema: String,
    pub model: ModelKind,
    pub config: TrainConfig,
    pub seed: u64,
    pub k_core: u32,
    pub mask_pct: f64,
    pub dataset_hash: String,
    pub vocab_hash: String,
    pub val_mse: f64,
    pub test_mse: f64,
}

pub fn checkpoint_paths(cfg: &ExperimentConfig, kind: ModelKind, seed: u64) -> (PathBuf, PathBuf) {
    let dir = cfg.out_dir.join("checkpoints");
    let stem = format!("{}-seed{}", kind.as_str().replace("++", "pp"), seed);
    (
        dir.join(format!("{stem}.ckpt")),
        dir.join(format!("{stem}.json")),
    )
}

/// `train`: grid-search each configured model on the single configured
/// (k, mask) point and save winner checkpoints with manifests.
pub fn train_and_checkpoint(
    cfg: &ExperimentConfig,
) -> Result<Vec<CheckpointManifest>, HarnessError> {
    cfg.validate()?;
    if cfg.k_cores.len() != 1 || cfg.mask_pcts.len() != 1 {
        return Err(HarnessError::Config(
            "train expects exactly one k_cores value and one mask_pcts value; use sweep for ranges"
                .into(),
        ));
    }
    let (k, mask) = (cfg.k_cores[0], cfg.mask_pcts[0]);
    let prepared = prep_point(cfg, k, mask)?;
    let axes = full_axes(cfg);
    let ckpt_dir = cfg.out_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| HarnessError::io(&ckpt_dir, e))?;

    let mut manifests = Vec::new();
    for &seed in &cfg.seeds {
        let base = cfg.train_config(cfg.latent_dims[0], cfg.l2_weights[0], cfg.dropouts[0], seed);
        for &kind in &cfg.models {
            let grid = grid_search(
                kind,
                &prepared.split,
                &inputs_for(kind, &prepared.arts),
                &axes,
                &base,
                cfg.max_jobs,
            )?;
            let test_mse = evaluate_part(grid.model.as_ref(), &prepared.split, Part::Test)?;
            let (ckpt_path, manifest_path) = checkpoint_paths(cfg, kind, seed);
            grid.model
                .as_ref()
                .common()
                .store
                .write_checkpoint(&ckpt_path)?;
            let manifest = CheckpointManifest {
                schema: "revbench.checkpoint.v1".into(),
                model: kind,
                config: grid.best_config.clone(),
                seed,
                k_core: k,
                mask_pct: mask,
                dataset_hash: prepared.dataset_hash.clone(),
                vocab_hash: prepared.arts.vocab.hash(),
                val_mse: grid.outcome.best_val_mse,
                test_mse,
            };
            let json = serde_json::to_string_pretty(&manifest)
                .map_err(|e| HarnessError::Config(format!("manifest encode: {e}")))?;
            std::fs::write(&manifest_path, json)
                .map_err(|e| HarnessError::io(&manifest_path, e))?;
            manifests.push(manifest);
        }
    }
    Ok(manifests)
}

/// `eval`: re-score a checkpoint against freshly prepared data,
/// refusing when the dataset or vocabulary hash has drifted.
pub fn evaluate_checkpoint(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
) -> Result<MetricReport, HarnessError> {
    let manifest_path = checkpoint.with_extension("json");
    let body =
        std::fs::read_to_string(&manifest_path).map_err(|e| HarnessError::io(&manifest_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&body).map_err(|e| {
        HarnessError::Config(format!(
            "corrupt checkpoint manifest {}: {e}",
            manifest_path.display()
        ))
    })?;

    let prepared = prep_point(cfg, manifest.k_core, manifest.mask_pct)?;
    if prepared.dataset_hash != manifest.dataset_hash {
        return Err(HarnessError::HashMismatch {
            what: "dataset",
            expected: manifest.dataset_hash,
            actual: prepared.dataset_hash,
        });
    }
    let vocab_hash = prepared.arts.vocab.hash();
    if vocab_hash != manifest.vocab_hash {
        return Err(HarnessError::HashMismatch {
            what: "vocabulary",
            expected: manifest.vocab_hash,
            actual: vocab_hash,
        });
    }

    let mut model = build_model(
        manifest.model,
        &prepared.split,
        &inputs_for(manifest.model, &prepared.arts),
        manifest.config.clone(),
    )?;
    model.common_mut().store.load_checkpoint(checkpoint)?;

    let bias_preds = {
        // untrained bias is not a meaningful baseline here; score the
        // checkpointed model against itself so bucket improvements are
        // zero unless a bias run is part of the same output CSV
        predict_part(model.as_ref(), &prepared.split, Part::Test)?
    };
    let test_preds = predict_part(model.as_ref(), &prepared.split, Part::Test)?;
    let truths: Vec<f64> = prepared.split.test().iter().map(|it| it.rating).collect();
    let test_mse = mse(&test_preds, &truths)?;
    let hr_at_1 = cfg.hr_eval.then(|| {
        hit_rate_at_1(
            |u, i| score_one(model.as_ref(), u, i).unwrap_or(f64::MIN),
            &prepared.split,
            manifest.seed,
        )
    });
    let buckets = bucket_improvement(&test_preds, &bias_preds, &prepared.split)?;
    Ok(MetricReport {
        dataset_hash: prepared.dataset_hash,
        model: manifest.model,
        config_id: manifest.config.config_id(),
        latent_dim: manifest.config.latent_dim,
        l2: manifest.config.l2,
        dropout: manifest.config.dropout,
        seed: manifest.seed,
        k_core: manifest.k_core,
        mask_pct: manifest.mask_pct,
        val_mse: manifest.val_mse,
        test_mse,
        hr_at_1,
        buckets,
    })
}
