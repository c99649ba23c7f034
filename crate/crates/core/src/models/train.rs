use rand::seq::SliceRandom;

use super::{Batch, ForwardCx, Mode, Model, ModelError};
use crate::autodiff::Tape;
use crate::corpus::{Part, SplitDataset};
use crate::stream;

/// Training record: the per-epoch validation MSE trace and which epoch
/// won. The model is left holding the best-epoch parameters.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub val_trace: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stopped_early: bool,
}

/// Seeded mini-batch Adam on the training partition with early
/// stopping on validation MSE. Deterministic given (seed, config,
/// data): every randomness consumer draws from its own derived stream,
/// so models that ignore a stream (no dropout, no resampling) still
/// shuffle identically.
pub fn train(model: &mut dyn Model, split: &SplitDataset) -> Result<TrainOutcome, ModelError> {
    let cfg = model.common().cfg.clone();
    let mut shuffle_rng = stream(cfg.seed, "shuffle");
    let mut dropout_rng = stream(cfg.seed, "dropout");
    let mut hook_rng = stream(cfg.seed, "epoch-hook");

    let n_train = split.train().len();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_snapshot = model.common().store.snapshot();
    let mut since_best = 0usize;
    let mut trace = Vec::new();
    let mut stopped_early = false;

    for epoch in 0..cfg.max_epochs {
        model.epoch_hook(epoch, &mut hook_rng);

        let mut order: Vec<u32> = (0..n_train as u32).collect();
        order.shuffle(&mut shuffle_rng);
        for (batch_idx, rows) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let batch = training_batch(model, split, rows);
            let mut tape = Tape::new();
            let bound = model.common().store.bind(&mut tape);
            let mut cx = ForwardCx {
                mode: Mode::Train,
                dropout_rng: &mut dropout_rng,
            };
            let loss = model.loss(&mut tape, &bound, &batch, &mut cx)?;
            let loss_value = tape.scalar_value(loss);
            if !loss_value.is_finite() {
                return Err(ModelError::Diverged {
                    epoch,
                    batch: batch_idx,
                    loss: loss_value,
                });
            }
            tape.backward(loss)?;
            model
                .common_mut()
                .store
                .adam_step(&tape, &bound, cfg.learning_rate);
        }

        let val_mse = super::evaluate_part(model, split, Part::Validation)?;
        if !val_mse.is_finite() {
            return Err(ModelError::Diverged {
                epoch,
                batch: 0,
                loss: val_mse,
            });
        }
        trace.push(val_mse);

        if val_mse < best_val {
            best_val = val_mse;
            best_epoch = epoch;
            best_snapshot = model.common().store.snapshot();
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }

    model.common_mut().store.restore(&best_snapshot);
    Ok(TrainOutcome {
        val_trace: trace,
        best_epoch,
        best_val_mse: best_val,
        stopped_early,
    })
}

fn training_batch(model: &dyn Model, split: &SplitDataset, rows: &[u32]) -> Batch {
    let train = split.train();
    let mut users = Vec::with_capacity(rows.len());
    let mut items = Vec::with_capacity(rows.len());
    let mut ratings = Vec::with_capacity(rows.len());
    for &row in rows {
        let it = train.get(row as usize);
        users.push(it.user);
        items.push(it.item);
        ratings.push(it.rating);
    }
    let (user_seen, item_seen) = model.common().batch_masks(&users, &items);
    Batch {
        users,
        items,
        ratings,
        user_seen,
        item_seen,
        train_rows: Some(rows.to_vec()),
    }
}
