use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use super::bias::BiasIds;
use super::mf::{mf_forward, FactorIds};
use super::{
    Batch, ForwardCx, Model, ModelCommon, ModelError, ModelKind, TrainConfig, TrainInputs,
};
use crate::autodiff::{BoundParams, Init, ParamId, Tape, Var};
use crate::corpus::SplitDataset;

/// Matrix factorization whose item factors are softmax-coupled to LDA
/// topic proportions over the training reviews.
///
/// Rating objective and prediction are exactly MF; training subtracts
/// `μ · lik`, the corpus log-likelihood of the training reviews under
/// `θ_i = softmax(κ·γ_i)` and `φ_k = softmax(ψ_k)` at the current
/// sampled topic assignments. Assignments are re-drawn between epochs.
pub struct HftModel {
    common: ModelCommon,
    bias: BiasIds,
    factors: FactorIds,
    topic_word_logits: ParamId,
    kappa: ParamId,
    /// Encoded training reviews in training-partition order.
    train_reviews: Vec<Vec<u32>>,
    /// Item of each training row.
    train_items: Vec<u32>,
    /// Current topic assignment per training token.
    assignments: Vec<Vec<u16>>,
    vocab_size: usize,
}

impl HftModel {
    pub fn new(
        split: &SplitDataset,
        inputs: &TrainInputs,
        cfg: TrainConfig,
    ) -> Result<Self, ModelError> {
        let vocab = inputs.vocab.as_ref().ok_or(ModelError::MissingInput {
            model: "hft",
            what: "a vocabulary",
        })?;
        let mut common = ModelCommon::new(split, cfg);
        let bias = BiasIds::register(&mut common, split);
        let factors = FactorIds::register(&mut common, split);
        let k = common.cfg.latent_dim;
        let vocab_size = vocab.len();
        let seed = common.cfg.seed;
        let topic_word_logits = common.store.add(
            "topic_word_logits",
            &[k, vocab_size],
            Init::Uniform { lo: -0.1, hi: 0.1 },
            false,
            seed,
        );
        let kappa = common
            .store
            .add("kappa", &[1], Init::Const(1.0), false, seed);

        let train = split.train();
        let train_reviews: Vec<Vec<u32>> =
            train.iter().map(|it| vocab.encode(&it.review)).collect();
        let train_items: Vec<u32> = train.iter().map(|it| it.item).collect();
        let assignments = train_reviews.iter().map(|r| vec![0u16; r.len()]).collect();

        Ok(Self {
            common,
            bias,
            factors,
            topic_word_logits,
            kappa,
            train_reviews,
            train_items,
            assignments,
            vocab_size,
        })
    }

    pub fn topics(&self) -> usize {
        self.common.cfg.latent_dim
    }

    /// `θ_i = softmax(κ·γ_i)` from current parameter values.
    pub fn theta(&self, item: u32) -> Vec<f64> {
        let k = self.topics();
        let kappa = self.common.store.value(self.kappa)[0];
        let gamma = &self.common.store.value(self.factors.gamma_item)
            [item as usize * k..(item as usize + 1) * k];
        softmax_slice(&gamma.iter().map(|&g| kappa * g).collect::<Vec<_>>())
    }

    /// `φ_k = softmax(ψ_k)` from current parameter values.
    pub fn phi(&self, topic: usize) -> Vec<f64> {
        let v = self.vocab_size;
        let psi = &self.common.store.value(self.topic_word_logits)[topic * v..(topic + 1) * v];
        softmax_slice(psi)
    }

    pub fn assignments(&self) -> &[Vec<u16>] {
        &self.assignments
    }

    /// Overrides the topic-word logits ψ; test hook for constructing
    /// known φ tables.
    pub fn set_topic_word_logits(&mut self, values: &[f64]) {
        self.common
            .store
            .value_mut(self.topic_word_logits)
            .copy_from_slice(values);
    }

    /// Re-draws every training token's topic from the conditional
    /// `p(k) ∝ θ_{i,k} · φ_{k,w}`; deterministic given the RNG state.
    pub fn resample(&mut self, rng: &mut ChaCha8Rng) {
        let k = self.topics();
        if k == 1 {
            // single topic: every assignment is topic 0 already
            return;
        }
        let n_items = self.common.seen_items.len();
        let theta: Vec<Vec<f64>> = (0..n_items as u32).map(|i| self.theta(i)).collect();
        let phi: Vec<Vec<f64>> = (0..k).map(|t| self.phi(t)).collect();
        let mut weights = vec![0.0f64; k];
        for (row, review) in self.train_reviews.iter().enumerate() {
            let item = self.train_items[row] as usize;
            for (pos, &word) in review.iter().enumerate() {
                let mut total = 0.0;
                for topic in 0..k {
                    total += theta[item][topic] * phi[topic][word as usize];
                    weights[topic] = total;
                }
                let draw: f64 = rng.random_range(0.0..total);
                let picked = weights.partition_point(|&c| c <= draw).min(k - 1);
                self.assignments[row][pos] = picked as u16;
            }
        }
    }

    /// Per-batch topic counts: `(B, K)` for the θ side and `(K, V)` for
    /// the φ side, at the current assignments.
    fn batch_counts(&self, rows: &[u32]) -> (Vec<f64>, Vec<f64>) {
        let k = self.topics();
        let mut theta_counts = vec![0.0f64; rows.len() * k];
        let mut phi_counts = vec![0.0f64; k * self.vocab_size];
        for (b, &row) in rows.iter().enumerate() {
            let review = &self.train_reviews[row as usize];
            let z = &self.assignments[row as usize];
            for (pos, &word) in review.iter().enumerate() {
                let topic = z[pos] as usize;
                theta_counts[b * k + topic] += 1.0;
                phi_counts[topic * self.vocab_size + word as usize] += 1.0;
            }
        }
        (theta_counts, phi_counts)
    }

    /// Full training objective `Σ (r̂ - r)² − μ·lik` at the current
    /// parameters and assignments (no L2), for monitoring alternation.
    pub fn objective(&self, split: &SplitDataset) -> f64 {
        let store = &self.common.store;
        let k = self.topics();
        let alpha = store.value(self.bias.alpha)[0];
        let beta_u = store.value(self.bias.beta_user);
        let beta_i = store.value(self.bias.beta_item);
        let gu = store.value(self.factors.gamma_user);
        let gi = store.value(self.factors.gamma_item);

        let mut sse = 0.0;
        for it in split.train().iter() {
            let (u, i) = (it.user as usize, it.item as usize);
            let dot: f64 = (0..k).map(|d| gu[u * k + d] * gi[i * k + d]).sum();
            let pred = alpha + beta_u[u] + beta_i[i] + dot;
            sse += (pred - it.rating) * (pred - it.rating);
        }

        let mut lik = 0.0;
        let n_items = self.common.seen_items.len();
        let theta: Vec<Vec<f64>> = (0..n_items as u32).map(|i| self.theta(i)).collect();
        let phi: Vec<Vec<f64>> = (0..k).map(|t| self.phi(t)).collect();
        for (row, review) in self.train_reviews.iter().enumerate() {
            let item = self.train_items[row] as usize;
            for (pos, &word) in review.iter().enumerate() {
                let topic = self.assignments[row][pos] as usize;
                lik += theta[item][topic].ln() + phi[topic][word as usize].ln();
            }
        }
        sse - self.common.cfg.hft_mu * lik
    }
}

pub(crate) fn softmax_slice(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let total: f64 = out.iter().sum();
    for o in out.iter_mut() {
        *o /= total;
    }
    out
}

impl Model for HftModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Hft
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

    fn loss(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        batch: &Batch,
        cx: &mut ForwardCx<'_>,
    ) -> Result<Var, ModelError> {
        let pred = self.forward(tape, bound, batch, cx)?;
        let mut loss = tape.mse_loss(pred, &batch.ratings)?;
        let cfg = &self.common.cfg;
        if cfg.l2 > 0.0 {
            if let Some(l2) = self.common.store.l2_penalty(tape, bound) {
                let weighted = tape.scale(l2, cfg.l2);
                loss = tape.add(loss, weighted)?;
            }
        }
        // μ = 0 must follow the exact MF code path, so the likelihood
        // term is only recorded when it carries weight.
        if cfg.hft_mu != 0.0 {
            let rows = batch.train_rows.as_ref().ok_or(ModelError::MissingInput {
                model: "hft",
                what: "training-row indices in the batch",
            })?;
            let (theta_counts, phi_counts) = self.batch_counts(rows);

            let gi = tape.lookup_rows(bound.var(self.factors.gamma_item), &batch.items)?;
            let scaled = tape.mul_scalar(gi, bound.var(self.kappa))?;
            let log_theta = tape.log_softmax(scaled)?;
            let theta_term = tape.mul_const(log_theta, &theta_counts)?;
            let theta_term = tape.sum_all(theta_term);

            let log_phi = tape.log_softmax(bound.var(self.topic_word_logits))?;
            let phi_term = tape.mul_const(log_phi, &phi_counts)?;
            let phi_term = tape.sum_all(phi_term);

            let lik = tape.add(theta_term, phi_term)?;
            let weighted = tape.scale(lik, -cfg.hft_mu / batch.len() as f64);
            loss = tape.add(loss, weighted)?;
        }
        Ok(loss)
    }

    fn epoch_hook(&mut self, epoch: usize, rng: &mut ChaCha8Rng) {
        if epoch % self.common.cfg.hft_resample_every == 0 {
            self.resample(rng);
        }
    }
}
