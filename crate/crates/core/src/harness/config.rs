//! Flat key-value experiment configuration.
//!
//! The format is one `key = value` pair per line; `#` starts a
//! comment; lists are comma-separated. `schema_version = 1` is
//! required. CLI flags carry the same keys and override file values.

use std::path::PathBuf;
use std::str::FromStr;

use super::HarnessError;
use crate::corpus::{FieldMap, LoadOptions, RatingScale};
use crate::models::{ModelKind, TrainConfig};
use crate::text::SgnsConfig;

/// Whether sweep points re-tune hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepRetune {
    /// Single configuration taken from the first value of each axis.
    Fixed,
    /// Reduced grid: first two latent dims, first two L2 weights,
    /// first dropout.
    Reduced,
    /// The full configured grid at every point.
    Full,
}

impl FromStr for SweepRetune {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "fixed" => Ok(SweepRetune::Fixed),
            "reduced" => Ok(SweepRetune::Reduced),
            "full" => Ok(SweepRetune::Full),
            other => Err(format!("unknown sweep_retune policy: {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub field_map: FieldMap,
    pub rating_scale: RatingScale,
    pub k_cores: Vec<u32>,
    pub mask_pcts: Vec<f64>,
    pub models: Vec<ModelKind>,
    pub latent_dims: Vec<usize>,
    pub l2_weights: Vec<f64>,
    pub dropouts: Vec<f64>,
    pub seeds: Vec<u64>,
    pub split_seed: u64,
    pub mask_seed: u64,
    pub embed_seed: u64,
    pub out_dir: PathBuf,
    pub max_jobs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub vocab_cap: usize,
    pub embed_dim: usize,
    pub embed_window: usize,
    pub embed_negatives: usize,
    pub embed_epochs: usize,
    pub concat_cap: usize,
    pub conv_filters: usize,
    pub conv_width: usize,
    pub hft_mu: f64,
    pub hft_resample_every: usize,
    pub fine_tune_embeddings: bool,
    pub hr_eval: bool,
    pub sweep_retune: SweepRetune,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            field_map: FieldMap::default(),
            rating_scale: RatingScale::default(),
            k_cores: vec![0],
            mask_pcts: vec![0.0],
            models: vec![ModelKind::Bias, ModelKind::Mf],
            // the default grid axes
            latent_dims: vec![1, 4, 8, 25, 50],
            l2_weights: vec![1e-4, 1e-5, 1e-6, 1e-7],
            dropouts: vec![0.2, 0.4, 0.6, 0.8],
            seeds: vec![42],
            split_seed: 17,
            mask_seed: 29,
            embed_seed: 7,
            out_dir: PathBuf::from("runs/out"),
            max_jobs: 1,
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 30,
            patience: 3,
            vocab_cap: 50_000,
            embed_dim: 64,
            embed_window: 5,
            embed_negatives: 5,
            embed_epochs: 5,
            concat_cap: 1000,
            conv_filters: 100,
            conv_width: 3,
            hft_mu: 0.1,
            hft_resample_every: 1,
            fine_tune_embeddings: false,
            hr_eval: true,
            sweep_retune: SweepRetune::Reduced,
        }
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, HarnessError>
where
    T::Err: std::fmt::Display,
{
    let items: Result<Vec<T>, _> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(T::from_str)
        .collect();
    let items = items.map_err(|e| HarnessError::Config(format!("{key}: {e}")))?;
    if items.is_empty() {
        return Err(HarnessError::Config(format!("{key}: empty list")));
    }
    Ok(items)
}

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T, HarnessError>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| HarnessError::Config(format!("{key}: {e}")))
}

impl ExperimentConfig {
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        match key {
            "schema_version" => {
                let v: u32 = parse_one(key, value)?;
                if v != 1 {
                    return Err(HarnessError::Config(format!(
                        "unsupported schema_version {v}, this build reads version 1"
                    )));
                }
            }
            "dataset" => self.dataset = PathBuf::from(value.trim()),
            "field_user" => self.field_map.user = value.trim().to_string(),
            "field_item" => self.field_map.item = value.trim().to_string(),
            "field_rating" => self.field_map.rating = value.trim().to_string(),
            "field_review" => self.field_map.review = value.trim().to_string(),
            "rating_min" => self.rating_scale.min = parse_one(key, value)?,
            "rating_max" => self.rating_scale.max = parse_one(key, value)?,
            "k_cores" => self.k_cores = parse_list(key, value)?,
            "mask_pcts" => self.mask_pcts = parse_list(key, value)?,
            "models" => self.models = parse_list(key, value)?,
            "latent_dims" => self.latent_dims = parse_list(key, value)?,
            "l2_weights" => self.l2_weights = parse_list(key, value)?,
            "dropouts" => self.dropouts = parse_list(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "split_seed" => self.split_seed = parse_one(key, value)?,
            "mask_seed" => self.mask_seed = parse_one(key, value)?,
            "embed_seed" => self.embed_seed = parse_one(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value.trim()),
            "max_jobs" => self.max_jobs = parse_one(key, value)?,
            "learning_rate" => self.learning_rate = parse_one(key, value)?,
            "batch_size" => self.batch_size = parse_one(key, value)?,
            "max_epochs" => self.max_epochs = parse_one(key, value)?,
            "patience" => self.patience = parse_one(key, value)?,
            "vocab_cap" => self.vocab_cap = parse_one(key, value)?,
            "embed_dim" => self.embed_dim = parse_one(key, value)?,
            "embed_window" => self.embed_window = parse_one(key, value)?,
            "embed_negatives" => self.embed_negatives = parse_one(key, value)?,
            "embed_epochs" => self.embed_epochs = parse_one(key, value)?,
            "concat_cap" => self.concat_cap = parse_one(key, value)?,
            "conv_filters" => self.conv_filters = parse_one(key, value)?,
            "conv_width" => self.conv_width = parse_one(key, value)?,
            "hft_mu" => self.hft_mu = parse_one(key, value)?,
            "hft_resample_every" => self.hft_resample_every = parse_one(key, value)?,
            "fine_tune_embeddings" => self.fine_tune_embeddings = parse_one(key, value)?,
            "hr_eval" => self.hr_eval = parse_one(key, value)?,
            "sweep_retune" => self.sweep_retune = parse_one(key, value)?,
            other => {
                return Err(HarnessError::Config(format!("unknown key: {other}")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.dataset.as_os_str().is_empty() {
            return Err(HarnessError::Config("dataset path is required".into()));
        }
        if self.latent_dims.is_empty() || self.l2_weights.is_empty() || self.dropouts.is_empty() {
            return Err(HarnessError::Config("grid axes must be non-empty".into()));
        }
        if self.models.is_empty() {
            return Err(HarnessError::Config(
                "at least one model is required".into(),
            ));
        }
        for &pct in &self.mask_pcts {
            if !(0.0..=100.0).contains(&pct) {
                return Err(HarnessError::Config(format!(
                    "mask percentage {pct} outside 0..=100"
                )));
            }
        }
        if self.rating_scale.min >= self.rating_scale.max {
            return Err(HarnessError::Config(
                "rating_min must be below rating_max".into(),
            ));
        }
        Ok(())
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            field_map: self.field_map.clone(),
            rating_scale: self.rating_scale,
        }
    }

    pub fn sgns(&self) -> SgnsConfig {
        SgnsConfig {
            dim: self.embed_dim,
            window: self.embed_window,
            negatives: self.embed_negatives,
            epochs: self.embed_epochs,
            ..Default::default()
        }
    }

    /// Training config for one grid point.
    pub fn train_config(&self, latent: usize, l2: f64, dropout: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            latent_dim: latent,
            l2,
            dropout,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed,
            hft_mu: self.hft_mu,
            hft_resample_every: self.hft_resample_every,
            conv_filters: self.conv_filters,
            conv_width: self.conv_width,
            neumf_hidden: None,
            fine_tune_embeddings: self.fine_tune_embeddings,
        }
    }
}

/// Parses the flat `key = value` format; later keys win.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::default();
    let mut saw_version = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            HarnessError::Config(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let key = key.trim();
        if key == "schema_version" {
            saw_version = true;
        }
        cfg.apply(key, value.trim())
            .map_err(|e| HarnessError::Config(format!("line {}: {e}", lineno + 1)))?;
    }
    if !saw_version {
        return Err(HarnessError::Config(
            "missing required key schema_version (this build reads version 1)".into(),
        ));
    }
    Ok(cfg)
}
