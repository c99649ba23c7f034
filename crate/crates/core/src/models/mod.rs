//! The compared rating predictors and their shared training loop.
//!
//! All models fit the same contract: a [`ParamStore`] of named tensors,
//! a graph-building `forward` that yields one prediction per batch row,
//! and an optional loss override (HFT adds its corpus-likelihood
//! regularizer). Entities absent from the training partition fall back
//! to the bias terms that do exist: their per-entity parameters are
//! masked to zero at prediction time.

mod bias;
mod deepconn;
mod hft;
mod mf;
mod narre;
mod neumf;
mod train;

pub use bias::BiasModel;
pub use deepconn::DeepConnModel;
pub use hft::HftModel;
pub use mf::MfModel;
pub use narre::NarreModel;
pub use neumf::NeuMfModel;
pub use train::{train, TrainOutcome};

use std::str::FromStr;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdError, BoundParams, ParamStore, Tape, Var};
use crate::corpus::{Part, PartView, RatingScale, SplitDataset};
use crate::text::{DocLayout, EmbeddingTable, ReviewDocs, Vocab};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error("{model} needs {what}")]
    MissingInput {
        model: &'static str,
        what: &'static str,
    },
    #[error("{model} needs {expected:?}-layout documents, got {got:?}")]
    WrongDocLayout {
        model: &'static str,
        expected: DocLayout,
        got: DocLayout,
    },
    #[error("training diverged at epoch {epoch}, batch {batch} (loss {loss})")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Bias,
    Mf,
    NeuMf,
    Hft,
    DeepConn,
    DeepConnPp,
    Narre,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Bias,
        ModelKind::Mf,
        ModelKind::NeuMf,
        ModelKind::Hft,
        ModelKind::DeepConn,
        ModelKind::DeepConnPp,
        ModelKind::Narre,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Bias => "bias",
            ModelKind::Mf => "mf",
            ModelKind::NeuMf => "neumf",
            ModelKind::Hft => "hft",
            ModelKind::DeepConn => "deepconn",
            ModelKind::DeepConnPp => "deepconn++",
            ModelKind::Narre => "narre",
        }
    }

    /// Which document layout the model consumes, if any.
    pub fn doc_layout(&self) -> Option<DocLayout> {
        match self {
            ModelKind::DeepConn | ModelKind::DeepConnPp => Some(DocLayout::Concat),
            ModelKind::Narre => Some(DocLayout::PerReview),
            _ => None,
        }
    }

    /// Whether the model reads review text at all (HFT uses encoded
    /// reviews directly rather than fixed-shape documents).
    pub fn uses_text(&self) -> bool {
        matches!(
            self,
            ModelKind::Hft | ModelKind::DeepConn | ModelKind::DeepConnPp | ModelKind::Narre
        )
    }

    /// Whether the dropout grid axis applies.
    pub fn uses_dropout(&self) -> bool {
        matches!(
            self,
            ModelKind::NeuMf | ModelKind::DeepConn | ModelKind::DeepConnPp | ModelKind::Narre
        )
    }

    /// Whether the latent-dimension grid axis applies.
    pub fn uses_latent_dim(&self) -> bool {
        !matches!(self, ModelKind::Bias)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "bias" => Ok(ModelKind::Bias),
            "mf" => Ok(ModelKind::Mf),
            "neumf" => Ok(ModelKind::NeuMf),
            "hft" => Ok(ModelKind::Hft),
            "deepconn" => Ok(ModelKind::DeepConn),
            "deepconn++" | "deepconnpp" => Ok(ModelKind::DeepConnPp),
            "narre" => Ok(ModelKind::Narre),
            other => Err(format!("unknown model kind: {other}")),
        }
    }
}

/// Hyperparameters for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub latent_dim: usize,
    pub l2: f64,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early stop after this many epochs without a validation
    /// improvement; 0 disables early stopping.
    pub patience: usize,
    pub seed: u64,
    /// HFT trade-off weight between rating fit and corpus likelihood.
    pub hft_mu: f64,
    /// HFT re-draws topic assignments every this many epochs.
    pub hft_resample_every: usize,
    pub conv_filters: usize,
    pub conv_width: usize,
    /// Hidden widths of the NeuMF interaction network; `None` means
    /// `[K, max(1, K/2)]`.
    pub neumf_hidden: Option<Vec<usize>>,
    /// Copy the word embedding table into the model and train it,
    /// instead of treating it as frozen input data.
    pub fine_tune_embeddings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            l2: 1e-6,
            dropout: 0.0,
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 30,
            patience: 3,
            seed: 42,
            hft_mu: 0.1,
            hft_resample_every: 1,
            conv_filters: 100,
            conv_width: 3,
            neumf_hidden: None,
            fine_tune_embeddings: false,
        }
    }
}

impl TrainConfig {
    /// Short identifier used in report rows and cache names.
    pub fn config_id(&self) -> String {
        format!("k{}_l2{:e}_do{}", self.latent_dim, self.l2, self.dropout)
    }
}

/// Shared immutable inputs for model construction.
#[derive(Debug, Clone, Default)]
pub struct TrainInputs {
    pub docs: Option<Arc<ReviewDocs>>,
    pub embeddings: Option<Arc<EmbeddingTable>>,
    pub vocab: Option<Arc<Vocab>>,
}

/// One mini-batch of interactions, plus the 0/1 seen-in-training masks
/// that implement the unseen-entity fallback.
pub struct Batch {
    pub users: Vec<u32>,
    pub items: Vec<u32>,
    pub ratings: Vec<f64>,
    pub user_seen: Vec<f64>,
    pub item_seen: Vec<f64>,
    /// Positions into the training index list, present only for
    /// training batches (HFT reads its topic assignments through them).
    pub train_rows: Option<Vec<u32>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-forward context: evaluation passes never consume dropout
/// randomness.
pub struct ForwardCx<'a> {
    pub mode: Mode,
    pub dropout_rng: &'a mut ChaCha8Rng,
}

impl ForwardCx<'_> {
    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }
}

/// State every model carries: config, parameters, seen masks, scale.
#[derive(Debug, Clone)]
pub struct ModelCommon {
    pub cfg: TrainConfig,
    pub store: ParamStore,
    pub seen_users: Vec<f64>,
    pub seen_items: Vec<f64>,
    pub scale: RatingScale,
}

impl ModelCommon {
    pub(crate) fn new(split: &SplitDataset, cfg: TrainConfig) -> Self {
        let (seen_u, seen_i) = split.seen_in_train();
        Self {
            cfg,
            store: ParamStore::new(),
            seen_users: seen_u.into_iter().map(|b| b as u8 as f64).collect(),
            seen_items: seen_i.into_iter().map(|b| b as u8 as f64).collect(),
            scale: split.data().rating_scale,
        }
    }

    pub(crate) fn batch_masks(&self, users: &[u32], items: &[u32]) -> (Vec<f64>, Vec<f64>) {
        (
            users.iter().map(|&u| self.seen_users[u as usize]).collect(),
            items.iter().map(|&i| self.seen_items[i as usize]).collect(),
        )
    }

    /// Mean training rating, the initialization for α.
    pub(crate) fn train_mean(train: &PartView<'_>) -> f64 {
        let total: f64 = train.iter().map(|it| it.rating).sum();
        total / train.len().max(1) as f64
    }
}

pub trait Model: Send + Sync {
    fn kind(&self) -> ModelKind;
    fn common(&self) -> &ModelCommon;
    fn common_mut(&mut self) -> &mut ModelCommon;

    /// Records the prediction graph for one batch; output shape `(B,)`,
    /// unclipped.
    fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        batch: &Batch,
        cx: &mut ForwardCx<'_>,
    ) -> Result<Var, ModelError>;

    /// Training loss: MSE plus L2 on the regularized parameters.
    /// HFT overrides this to subtract its likelihood term.
    fn loss(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        batch: &Batch,
        cx: &mut ForwardCx<'_>,
    ) -> Result<Var, ModelError> {
        let pred = self.forward(tape, bound, batch, cx)?;
        let mut loss = tape.mse_loss(pred, &batch.ratings)?;
        let cfg = &self.common().cfg;
        if cfg.l2 > 0.0 {
            if let Some(l2) = self.common().store.l2_penalty(tape, bound) {
                let weighted = tape.scale(l2, cfg.l2);
                loss = tape.add(loss, weighted)?;
            }
        }
        Ok(loss)
    }

    /// Called at the top of every epoch (HFT resamples its topic
    /// assignments here).
    fn epoch_hook(&mut self, _epoch: usize, _rng: &mut ChaCha8Rng) {}
}

/// Builds a model of the requested kind for the given split.
pub fn build_model(
    kind: ModelKind,
    split: &SplitDataset,
    inputs: &TrainInputs,
    cfg: TrainConfig,
) -> Result<Box<dyn Model>, ModelError> {
    Ok(match kind {
        ModelKind::Bias => Box::new(BiasModel::new(split, cfg)),
        ModelKind::Mf => Box::new(MfModel::new(split, cfg)),
        ModelKind::NeuMf => Box::new(NeuMfModel::new(split, cfg)),
        ModelKind::Hft => Box::new(HftModel::new(split, inputs, cfg)?),
        ModelKind::DeepConn => Box::new(DeepConnModel::new(split, inputs, cfg, false)?),
        ModelKind::DeepConnPp => Box::new(DeepConnModel::new(split, inputs, cfg, true)?),
        ModelKind::Narre => Box::new(NarreModel::new(split, inputs, cfg)?),
    })
}

/// Unclipped model scores for arbitrary (user, item) pairs.
pub fn score_pairs(model: &dyn Model, pairs: &[(u32, u32)]) -> Result<Vec<f64>, ModelError> {
    let common = model.common();
    let users: Vec<u32> = pairs.iter().map(|&(u, _)| u).collect();
    let items: Vec<u32> = pairs.iter().map(|&(_, i)| i).collect();
    let mut out = Vec::with_capacity(pairs.len());
    let chunk = common.cfg.batch_size.max(1);
    let mut rng = crate::stream(0, "eval-unused");
    for (uc, ic) in users.chunks(chunk).zip(items.chunks(chunk)) {
        let (user_seen, item_seen) = common.batch_masks(uc, ic);
        let batch = Batch {
            users: uc.to_vec(),
            items: ic.to_vec(),
            ratings: vec![0.0; uc.len()],
            user_seen,
            item_seen,
            train_rows: None,
        };
        let mut tape = Tape::new();
        let bound = common.store.bind(&mut tape);
        let mut cx = ForwardCx {
            mode: Mode::Eval,
            dropout_rng: &mut rng,
        };
        let pred = model.forward(&mut tape, &bound, &batch, &mut cx)?;
        out.extend_from_slice(tape.value(pred));
    }
    Ok(out)
}

/// Unclipped score for one (user, item) pair.
pub fn score_one(model: &dyn Model, user: u32, item: u32) -> Result<f64, ModelError> {
    Ok(score_pairs(model, &[(user, item)])?[0])
}

/// Clipped predictions for one split partition, aligned with the
/// partition's index order.
pub fn predict_part(
    model: &dyn Model,
    split: &SplitDataset,
    part: Part,
) -> Result<Vec<f64>, ModelError> {
    let view = split.part(part);
    let pairs: Vec<(u32, u32)> = view.iter().map(|it| (it.user, it.item)).collect();
    let scale = model.common().scale;
    let mut preds = score_pairs(model, &pairs)?;
    for p in preds.iter_mut() {
        *p = scale.clamp(*p);
    }
    Ok(preds)
}

/// Clipped-prediction MSE over one partition.
pub fn evaluate_part(
    model: &dyn Model,
    split: &SplitDataset,
    part: Part,
) -> Result<f64, ModelError> {
    let preds = predict_part(model, split, part)?;
    let truths: Vec<f64> = split.part(part).iter().map(|it| it.rating).collect();
    Ok(crate::eval::mse(&preds, &truths).expect("aligned lengths"))
}

#[cfg(test)]
mod tests;
