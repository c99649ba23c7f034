use rand_chacha::ChaCha8Rng;

use super::{Batch, ForwardCx, Model, ModelCommon, ModelError, ModelKind, TrainConfig};
use crate::autodiff::{BoundParams, Init, ParamId, Tape, Var};
use crate::corpus::SplitDataset;

/// Handles for the three bias parameters shared by every model that
/// learns them.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BiasIds {
    pub alpha: ParamId,
    pub beta_user: ParamId,
    pub beta_item: ParamId,
}

impl BiasIds {
    /// Registers α (initialized to the training mean), β_u, β_i.
    pub(crate) fn register(common: &mut ModelCommon, split: &SplitDataset) -> Self {
        let mean = ModelCommon::train_mean(&split.train());
        let seed = common.cfg.seed;
        let n_users = split.data().n_users();
        let n_items = split.data().n_items();
        BiasIds {
            alpha: common
                .store
                .add("alpha", &[1], Init::Const(mean), false, seed),
            beta_user: common
                .store
                .add("beta_user", &[n_users], Init::Zeros, false, seed),
            beta_item: common
                .store
                .add("beta_item", &[n_items], Init::Zeros, false, seed),
        }
    }

    /// `α + β_u + β_i` with unseen entities' β masked to zero.
    pub(crate) fn sum(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        batch: &Batch,
    ) -> Result<Var, ModelError> {
        let bu = tape.gather(bound.var(self.beta_user), &batch.users)?;
        let bu = tape.mul_const(bu, &batch.user_seen)?;
        let bi = tape.gather(bound.var(self.beta_item), &batch.items)?;
        let bi = tape.mul_const(bi, &batch.item_seen)?;
        let sum = tape.add(bu, bi)?;
        Ok(tape.add_scalar(sum, bound.var(self.alpha))?)
    }
}

/// `r̂ = α + β_u + β_i`; no user-item interaction term.
pub struct BiasModel {
    common: ModelCommon,
    bias: BiasIds,
}

impl BiasModel {
    pub fn new(split: &SplitDataset, cfg: TrainConfig) -> Self {
        let mut common = ModelCommon::new(split, cfg);
        let bias = BiasIds::register(&mut common, split);
        Self { common, bias }
    }
}

impl Model for BiasModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Bias
    }

    fn common(&self) -> &ModelCommon {
        &self.common
    }

    fn common_mut(&mut self) -> &mut ModelCommon {
        &mut self.common
    }

    fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        batch: &Batch,
        _cx: &mut ForwardCx<'_>,
    ) -> Result<Var, ModelError> {
        self.bias.sum(tape, bound, batch)
    }

    fn epoch_hook(&mut self, _epoch: usize, _rng: &mut ChaCha8Rng) {}
}
