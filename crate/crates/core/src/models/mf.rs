use super::bias::BiasIds;
use super::{Batch, ForwardCx, Model, ModelCommon, ModelError, ModelKind, TrainConfig};
use crate::autodiff::{BoundParams, Init, ParamId, Tape, Var};
use crate::corpus::SplitDataset;

/// Handles for the latent factor tables.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FactorIds {
    pub gamma_user: ParamId,
    pub gamma_item: ParamId,
}

impl FactorIds {
    pub(crate) fn register(common: &mut ModelCommon, split: &SplitDataset) -> Self {
        let k = common.cfg.latent_dim;
        let seed = common.cfg.seed;
        let init = Init::Xavier {
            fan_in: k,
            fan_out: k,
        };
        FactorIds {
            gamma_user: common.store.add(
                "gamma_user",
                &[split.data().n_users(), k],
                init,
                true,
                seed,
            ),
            gamma_item: common.store.add(
                "gamma_item",
                &[split.data().n_items(), k],
                init,
                true,
                seed,
            ),
        }
    }

    /// Looked-up factor rows with unseen entities masked to zero:
    /// `(γ_u rows, γ_i rows)`, each `(B, K)`.
    pub(crate) fn rows(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        batch: &Batch,
    ) -> Result<(Var, Var), ModelError> {
        let gu = tape.lookup_rows(bound.var(self.gamma_user), &batch.users)?;
        let gu = tape.scale_rows(gu, &batch.user_seen)?;
        let gi = tape.lookup_rows(bound.var(self.gamma_item), &batch.items)?;
        let gi = tape.scale_rows(gi, &batch.item_seen)?;
        Ok((gu, gi))
    }
}

/// `r̂ = α + β_u + β_i + γ_u·γ_i`.
pub struct MfModel {
    common: ModelCommon,
    bias: BiasIds,
    factors: FactorIds,
}

impl MfModel {
    pub fn new(split: &SplitDataset, cfg: TrainConfig) -> Self {
        let mut common = ModelCommon::new(split, cfg);
        let bias = BiasIds::register(&mut common, split);
        let factors = FactorIds::register(&mut common, split);
        Self {
            common,
            bias,
            factors,
        }
    }
}

/// Shared by MF and HFT so the two models record identical graphs.
pub(crate) fn mf_forward(
    tape: &mut Tape,
    bound: &BoundParams,
    batch: &Batch,
    bias: BiasIds,
    factors: FactorIds,
) -> Result<Var, ModelError> {
    let base = bias.sum(tape, bound, batch)?;
    let (gu, gi) = factors.rows(tape, bound, batch)?;
    let dot = tape.rows_dot(gu, gi)?;
    Ok(tape.add(base, dot)?)
}

impl Model for MfModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Mf
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
        mf_forward(tape, bound, batch, self.bias, self.factors)
    }
}
