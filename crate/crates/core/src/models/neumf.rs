use super::bias::BiasIds;
use super::mf::FactorIds;
use super::{Batch, ForwardCx, Model, ModelCommon, ModelError, ModelKind, TrainConfig};
use crate::autodiff::{BoundParams, Init, ParamId, Tape, Var};
use crate::corpus::SplitDataset;

/// `r̂ = α + β_u + β_i + F(γ_u, γ_i)` where F is an MLP on the
/// concatenated id embeddings.
pub struct NeuMfModel {
    common: ModelCommon,
    bias: BiasIds,
    factors: FactorIds,
    layers: Vec<(ParamId, ParamId)>,
}

impl NeuMfModel {
    pub fn new(split: &SplitDataset, cfg: TrainConfig) -> Self {
        let mut common = ModelCommon::new(split, cfg);
        let bias = BiasIds::register(&mut common, split);
        let factors = FactorIds::register(&mut common, split);

        let k = common.cfg.latent_dim;
        let hidden = common
            .cfg
            .neumf_hidden
            .clone()
            .unwrap_or_else(|| vec![k, (k / 2).max(1)]);
        let seed = common.cfg.seed;
        let mut layers = Vec::new();
        let mut width = 2 * k;
        for (l, &h) in hidden.iter().chain(std::iter::once(&1)).enumerate() {
            let w = common.store.add(
                &format!("mlp_w{l}"),
                &[width, h],
                Init::Xavier {
                    fan_in: width,
                    fan_out: h,
                },
                true,
                seed,
            );
            let b = common
                .store
                .add(&format!("mlp_b{l}"), &[h], Init::Zeros, false, seed);
            layers.push((w, b));
            width = h;
        }
        Self {
            common,
            bias,
            factors,
            layers,
        }
    }
}

impl Model for NeuMfModel {
    fn kind(&self) -> ModelKind {
        ModelKind::NeuMf
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
        cx: &mut ForwardCx<'_>,
    ) -> Result<Var, ModelError> {
        let base = self.bias.sum(tape, bound, batch)?;
        let (gu, gi) = self.factors.rows(tape, bound, batch)?;
        let mut x = tape.concat2(gu, gi)?;
        let dropout = self.common.cfg.dropout;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            x = tape.matmul(x, bound.var(w))?;
            x = tape.add_bias(x, bound.var(b))?;
            let is_output = l + 1 == self.layers.len();
            if !is_output {
                x = tape.relu(x);
                if cx.is_train() && dropout > 0.0 {
                    x = tape.dropout(x, dropout, cx.dropout_rng);
                }
            }
        }
        let f = tape.reshape(x, &[batch.len()])?;
        Ok(tape.add(base, f)?)
    }
}
