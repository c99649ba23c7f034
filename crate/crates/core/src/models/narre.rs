use std::sync::Arc;

use super::bias::BiasIds;
use super::deepconn::DeepConnModel;
use super::{
    Batch, ForwardCx, Model, ModelCommon, ModelError, ModelKind, TrainConfig, TrainInputs,
};
use crate::autodiff::{BoundParams, Init, ParamId, Tape, Var};
use crate::corpus::SplitDataset;
use crate::text::{DocLayout, DocStore, EmbeddingTable, ReviewDocs, NO_COUNTERPART, PAD};

struct SideIds {
    conv_w: ParamId,
    conv_b: ParamId,
    /// Projection is weights-only so an entity with no usable reviews
    /// keeps an exactly-zero latent.
    proj_w: ParamId,
    att_w: ParamId,
    att_key: ParamId,
    att_b: ParamId,
    att_v: ParamId,
    id_embed: ParamId,
}

/// Review-level attention over per-review TextCNN encodings, combined
/// with id embeddings; learns the global/user/item biases by default.
///
/// Attention scores follow the additive form
/// `score_j = v·relu(W_r enc_j + W_id key_j + b)` where `key_j` is the
/// id embedding of the review's counterpart entity. All-padding review
/// slots are masked out of the softmax; an entity whose slots are all
/// padding gets a zero latent vector.
pub struct NarreModel {
    common: ModelCommon,
    bias: BiasIds,
    user_side: SideIds,
    item_side: SideIds,
    top_w: ParamId,
    top_b: ParamId,
    embed: Option<ParamId>,
    docs: Arc<ReviewDocs>,
    embeddings: Arc<EmbeddingTable>,
}

impl NarreModel {
    pub fn new(
        split: &SplitDataset,
        inputs: &TrainInputs,
        cfg: TrainConfig,
    ) -> Result<Self, ModelError> {
        let docs = inputs.docs.clone().ok_or(ModelError::MissingInput {
            model: "narre",
            what: "review documents",
        })?;
        if docs.layout != DocLayout::PerReview {
            return Err(ModelError::WrongDocLayout {
                model: "narre",
                expected: DocLayout::PerReview,
                got: docs.layout,
            });
        }
        let embeddings = inputs.embeddings.clone().ok_or(ModelError::MissingInput {
            model: "narre",
            what: "a word embedding table",
        })?;

        let mut common = ModelCommon::new(split, cfg);
        let bias = BiasIds::register(&mut common, split);
        let (f, w, k, d) = (
            common.cfg.conv_filters,
            common.cfg.conv_width,
            common.cfg.latent_dim,
            embeddings.dim(),
        );
        let seed = common.cfg.seed;
        let n_users = split.data().n_users();
        let n_items = split.data().n_items();
        let side = |prefix: &str, n_own: usize, n_other: usize, common: &mut ModelCommon| SideIds {
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
            att_w: common.store.add(
                &format!("{prefix}_att_w"),
                &[f, k],
                Init::Xavier {
                    fan_in: f,
                    fan_out: k,
                },
                true,
                seed,
            ),
            att_key: common.store.add(
                &format!("{prefix}_att_key"),
                &[n_other, k],
                Init::Xavier {
                    fan_in: k,
                    fan_out: k,
                },
                true,
                seed,
            ),
            att_b: common
                .store
                .add(&format!("{prefix}_att_b"), &[k], Init::Zeros, false, seed),
            att_v: common.store.add(
                &format!("{prefix}_att_v"),
                &[k, 1],
                Init::Xavier {
                    fan_in: k,
                    fan_out: 1,
                },
                true,
                seed,
            ),
            id_embed: common.store.add(
                &format!("{prefix}_id_embed"),
                &[n_own, k],
                Init::Xavier {
                    fan_in: k,
                    fan_out: k,
                },
                true,
                seed,
            ),
        };
        let user_side = side("user", n_users, n_items, &mut common);
        let item_side = side("item", n_items, n_users, &mut common);
        let top_w = common.store.add(
            "top_w",
            &[k, 1],
            Init::Xavier {
                fan_in: k,
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
            user_side,
            item_side,
            top_w,
            top_b,
            embed,
            docs,
            embeddings,
        })
    }

    /// Zeroes every network weight so the prediction collapses to the
    /// bias terms.
    pub fn zero_network(&mut self) {
        for side in [&self.user_side, &self.item_side] {
            for id in [
                side.conv_w,
                side.conv_b,
                side.proj_w,
                side.att_w,
                side.att_key,
                side.att_b,
                side.att_v,
                side.id_embed,
            ] {
                self.common.store.value_mut(id).fill(0.0);
            }
        }
        self.common.store.value_mut(self.top_w).fill(0.0);
        self.common.store.value_mut(self.top_b).fill(0.0);
    }

    /// Attention weights over one entity's review slots, in slot order
    /// (evaluation mode; padding slots get weight zero).
    pub fn attention_weights(&self, entity: u32, user_side: bool) -> Result<Vec<f64>, ModelError> {
        let store = if user_side {
            &self.docs.users
        } else {
            &self.docs.items
        };
        let side = if user_side {
            &self.user_side
        } else {
            &self.item_side
        };
        let mut tape = Tape::new();
        let bound = self.common.store.bind(&mut tape);
        let mut rng = crate::stream(0, "eval-unused");
        let mut cx = ForwardCx {
            mode: super::Mode::Eval,
            dropout_rng: &mut rng,
        };
        let (_, weights) = self.encode_side(&mut tape, &bound, &[entity], store, side, &mut cx)?;
        Ok(tape.value(weights).to_vec())
    }

    /// Returns (entity latent `(B, K)`, attention weights `(B, R)`).
    fn encode_side(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        entities: &[u32],
        store: &DocStore,
        side: &SideIds,
        cx: &mut ForwardCx<'_>,
    ) -> Result<(Var, Var), ModelError> {
        let r = store.reviews_per_entity();
        let l = store.tokens_per_review();
        let b = entities.len();
        let mut tokens = Vec::with_capacity(b * r * l);
        let mut counterparts = Vec::with_capacity(b * r);
        let mut mask = Vec::with_capacity(b * r);
        for &e in entities {
            tokens.extend_from_slice(store.doc(e));
            for slot in 0..r {
                let c = store.counterpart(e, slot);
                let filled = store.review(e, slot).iter().any(|&t| t != PAD);
                mask.push(filled && c != NO_COUNTERPART);
                counterparts.push(if c == NO_COUNTERPART { 0 } else { c });
            }
        }
        let emb =
            DeepConnModel::embed_doc_tokens(tape, bound, self.embed, &self.embeddings, &tokens)?;
        let d = self.embeddings.dim();
        let seq = tape.reshape(emb, &[b * r, l, d])?;
        let conv = tape.conv1d_same(seq, bound.var(side.conv_w), self.common.cfg.conv_width)?;
        let conv = tape.add_bias(conv, bound.var(side.conv_b))?;
        let act = tape.relu(conv);
        let mut enc = tape.max_over_time(act)?; // (B·R, F)
        if cx.is_train() && self.common.cfg.dropout > 0.0 {
            enc = tape.dropout(enc, self.common.cfg.dropout, cx.dropout_rng);
        }

        let projected = tape.matmul(enc, bound.var(side.att_w))?; // (B·R, K)
        let keys = tape.lookup_rows(bound.var(side.att_key), &counterparts)?;
        let summed = tape.add(projected, keys)?;
        let summed = tape.add_bias(summed, bound.var(side.att_b))?;
        let act = tape.relu(summed);
        let scores = tape.matmul(act, bound.var(side.att_v))?; // (B·R, 1)
        let scores = tape.reshape(scores, &[b, r])?;
        let weights = tape.masked_softmax(scores, &mask)?;

        let enc3 = tape.reshape(enc, &[b, r, self.common.cfg.conv_filters])?;
        let pooled = tape.attend(weights, enc3)?; // (B, F)
        let latent = tape.matmul(pooled, bound.var(side.proj_w))?; // (B, K)
        Ok((latent, weights))
    }
}

impl Model for NarreModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Narre
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
        let (user_text, _) = self.encode_side(
            tape,
            bound,
            &batch.users,
            &self.docs.users,
            &self.user_side,
            cx,
        )?;
        let (item_text, _) = self.encode_side(
            tape,
            bound,
            &batch.items,
            &self.docs.items,
            &self.item_side,
            cx,
        )?;
        let user_id = tape.lookup_rows(bound.var(self.user_side.id_embed), &batch.users)?;
        let user_id = tape.scale_rows(user_id, &batch.user_seen)?;
        let item_id = tape.lookup_rows(bound.var(self.item_side.id_embed), &batch.items)?;
        let item_id = tape.scale_rows(item_id, &batch.item_seen)?;
        let user_lat = tape.add(user_text, user_id)?;
        let item_lat = tape.add(item_text, item_id)?;
        let joint = tape.mul(user_lat, item_lat)?;
        let out = tape.matmul(joint, bound.var(self.top_w))?;
        let out = tape.add_bias(out, bound.var(self.top_b))?;
        let out = tape.reshape(out, &[batch.len()])?;
        let base = self.bias.sum(tape, bound, batch)?;
        Ok(tape.add(out, base)?)
    }
}
