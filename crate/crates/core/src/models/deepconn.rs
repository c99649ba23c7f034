use std::sync::Arc;

use super::bias::BiasIds;
use super::{
    Batch, ForwardCx, Model, ModelCommon, ModelError, ModelKind, TrainConfig, TrainInputs,
};
use crate::autodiff::{BoundParams, Init, ParamId, Tape, Var};
use crate::corpus::SplitDataset;
use crate::text::{DocLayout, DocStore, EmbeddingTable, ReviewDocs};

struct TowerIds {
    conv_w: ParamId,
    conv_b: ParamId,
    proj_w: ParamId,
    proj_b: ParamId,
}

/// Two TextCNN towers over the concatenated user/item review documents
/// feeding a dense regressor. The `++` variant adds learned
/// global/user/item biases to the network output.
pub struct DeepConnModel {
    common: ModelCommon,
    bias: Option<BiasIds>,
    user_tower: TowerIds,
    item_tower: TowerIds,
    top_w: ParamId,
    top_b: ParamId,
    embed: Option<ParamId>,
    docs: Arc<ReviewDocs>,
    embeddings: Arc<EmbeddingTable>,
}

impl DeepConnModel {
    pub fn new(
        split: &SplitDataset,
        inputs: &TrainInputs,
        cfg: TrainConfig,
        with_biases: bool,
    ) -> Result<Self, ModelError> {
        let docs = inputs.docs.clone().ok_or(ModelError::MissingInput {
            model: "deepconn",
            what: "review documents",
        })?;
        if docs.layout != DocLayout::Concat {
            return Err(ModelError::WrongDocLayout {
                model: "deepconn",
                expected: DocLayout::Concat,
                got: docs.layout,
            });
        }
        let embeddings = inputs.embeddings.clone().ok_or(ModelError::MissingInput {
            model: "deepconn",
            what: "a word embedding table",
        })?;

        let mut common = ModelCommon::new(split, cfg);
        let bias = with_biases.then(|| BiasIds::register(&mut common, split));
        let (f, w, k, d) = (
            common.cfg.conv_filters,
            common.cfg.conv_width,
            common.cfg.latent_dim,
            embeddings.dim(),
        );
        let seed = common.cfg.seed;
        let tower = |prefix: &str, common: &mut ModelCommon| TowerIds {
            conv_w: common.store.add(
                &format!("{prefix}_conv_w"),
                &[f, w * d],
                Init::Xavier {
                    fan_in: w * d,
                    fan_out: f,
                },
                true,
                seed,
            ),
            conv_b: common
                .store
                .add(&format!("{prefix}_conv_b"), &[f], Init::Zeros, false, seed),
            proj_w: common.store.add(
                &format!("{prefix}_proj_w"),
                &[f, k],
                Init::Xavier {
                    fan_in: f,
                    fan_out: k,
                },
                true,
                seed,
            ),
            proj_b: common
                .store
                .add(&format!("{prefix}_proj_b"), &[k], Init::Zeros, false, seed),
        };
        let user_tower = tower("user", &mut common);
        let item_tower = tower("item", &mut common);
        let top_w = common.store.add(
            "top_w",
            &[2 * k, 1],
            Init::Xavier {
                fan_in: 2 * k,
                fan_out: 1,
            },
            true,
            seed,
        );
        let top_b = common.store.add("top_b", &[1], Init::Zeros, false, seed);
        let embed = common.cfg.fine_tune_embeddings.then(|| {
            let id = common
                .store
                .add("embed", &[embeddings.len(), d], Init::Zeros, false, seed);
            common
                .store
                .value_mut(id)
                .copy_from_slice(embeddings.rows());
            id
        });

        Ok(Self {
            common,
            bias,
            user_tower,
            item_tower,
            top_w,
            top_b,
            embed,
            docs,
            embeddings,
        })
    }

    /// Zeroes every network weight; the `++` degeneracy tests rely on
    /// the prediction collapsing to the bias terms.
    pub fn zero_network(&mut self) {
        for tower in [&self.user_tower, &self.item_tower] {
            for id in [tower.conv_w, tower.conv_b, tower.proj_w, tower.proj_b] {
                self.common.store.value_mut(id).fill(0.0);
            }
        }
        self.common.store.value_mut(self.top_w).fill(0.0);
        self.common.store.value_mut(self.top_b).fill(0.0);
    }

    pub(crate) fn embed_doc_tokens(
        tape: &mut Tape,
        bound: &BoundParams,
        embed_param: Option<ParamId>,
        table: &EmbeddingTable,
        ids: &[u32],
    ) -> Result<Var, ModelError> {
        if let Some(param) = embed_param {
            Ok(tape.lookup_rows(bound.var(param), ids)?)
        } else {
            // frozen table: gather outside the graph, feed as constant
            let d = table.dim();
            let mut data = Vec::with_capacity(ids.len() * d);
            for &id in ids {
                data.extend_from_slice(table.row(id));
            }
            Ok(tape.constant_from_slice(&[ids.len(), d], &data))
        }
    }

    fn tower(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        entities: &[u32],
        store: &DocStore,
        ids: &TowerIds,
        cx: &mut ForwardCx<'_>,
    ) -> Result<Var, ModelError> {
        let t = store.reviews_per_entity() * store.tokens_per_review();
        let mut tokens = Vec::with_capacity(entities.len() * t);
        for &e in entities {
            tokens.extend_from_slice(store.doc(e));
        }
        let emb = Self::embed_doc_tokens(tape, bound, self.embed, &self.embeddings, &tokens)?;
        let d = self.embeddings.dim();
        let seq = tape.reshape(emb, &[entities.len(), t, d])?;
        let conv = tape.conv1d_same(seq, bound.var(ids.conv_w), self.common.cfg.conv_width)?;
        let conv = tape.add_bias(conv, bound.var(ids.conv_b))?;
        let act = tape.relu(conv);
        let mut pooled = tape.max_over_time(act)?;
        if cx.is_train() && self.common.cfg.dropout > 0.0 {
            pooled = tape.dropout(pooled, self.common.cfg.dropout, cx.dropout_rng);
        }
        let proj = tape.matmul(pooled, bound.var(ids.proj_w))?;
        Ok(tape.add_bias(proj, bound.var(ids.proj_b))?)
    }
}

impl Model for DeepConnModel {
    fn kind(&self) -> ModelKind {
        if self.bias.is_some() {
            ModelKind::DeepConnPp
        } else {
            ModelKind::DeepConn
        }
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
        let user_lat = self.tower(
            tape,
            bound,
            &batch.users,
            &self.docs.users,
            &self.user_tower,
            cx,
        )?;
        let item_lat = self.tower(
            tape,
            bound,
            &batch.items,
            &self.docs.items,
            &self.item_tower,
            cx,
        )?;
        let joint = tape.concat2(user_lat, item_lat)?;
        let out = tape.matmul(joint, bound.var(self.top_w))?;
        let out = tape.add_bias(out, bound.var(self.top_b))?;
        let out = tape.reshape(out, &[batch.len()])?;
        match &self.bias {
            None => Ok(out),
            Some(bias) => {
                let base = bias.sum(tape, bound, batch)?;
                Ok(tape.add(out, base)?)
            }
        }
    }
}
