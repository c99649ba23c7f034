//! Evaluation protocols: MSE, the HR@1 sampled-ranking metric,
//! frequency-bucketed improvement curves, and the density/masking
//! sweep drivers.

mod sweep;

pub use sweep::{density_sweep, mask_sweep, DensityPoint, MaskPoint};

use rand::seq::SliceRandom;
use rand::RngExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Part, SplitDataset};
use crate::models::ModelKind;
use crate::stream;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction/truth length mismatch: {preds} vs {truths}")]
    LengthMismatch { preds: usize, truths: usize },
    #[error("cannot compute a metric over zero points")]
    Empty,
    #[error("sweep values must be strictly increasing, got {0:?}")]
    UnorderedSweep(Vec<f64>),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
}

/// Mean squared error with double-precision accumulation.
pub fn mse(preds: &[f64], truths: &[f64]) -> Result<f64, EvalError> {
    if preds.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            truths: truths.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut acc = 0.0f64;
    for (p, t) in preds.iter().zip(truths) {
        let d = p - t;
        acc += d * d;
    }
    Ok(acc / preds.len() as f64)
}

/// HR@1 over eligible test users, or an explicit "not applicable".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Hr1Result {
    Applicable {
        rate: f64,
        eligible: usize,
        skipped: usize,
    },
    NotApplicable {
        skipped: usize,
    },
}

impl Hr1Result {
    pub fn rate(&self) -> Option<f64> {
        match self {
            Hr1Result::Applicable { rate, .. } => Some(*rate),
            Hr1Result::NotApplicable { .. } => None,
        }
    }

    pub fn eligible(&self) -> usize {
        match self {
            Hr1Result::Applicable { eligible, .. } => *eligible,
            Hr1Result::NotApplicable { .. } => 0,
        }
    }
}

/// Sampled-ranking hit rate: for every test user with at least one
/// test item rated at the scale maximum (I+) and at least five other
/// distinct test-rated items (I−), sample one positive and five
/// negatives and count a hit iff the positive scores strictly highest.
/// Ties count as misses.
pub fn hit_rate_at_1<F>(mut score: F, split: &SplitDataset, seed: u64) -> Hr1Result
where
    F: FnMut(u32, u32) -> f64,
{
    let data = split.data();
    let max_rating = data.rating_scale.max;
    let n_users = data.n_users();
    // distinct test items per user, split into I+ (some max rating)
    // and I− (never max)
    let mut rated_max: Vec<Vec<u32>> = vec![Vec::new(); n_users];
    let mut rated_other: Vec<Vec<u32>> = vec![Vec::new(); n_users];
    {
        let mut max_flag: Vec<std::collections::HashMap<u32, bool>> =
            vec![std::collections::HashMap::new(); n_users];
        for it in split.part(Part::Test).iter() {
            let slot = max_flag[it.user as usize].entry(it.item).or_insert(false);
            *slot = *slot || it.rating == max_rating;
        }
        for (u, items) in max_flag.into_iter().enumerate() {
            let mut entries: Vec<(u32, bool)> = items.into_iter().collect();
            entries.sort_unstable();
            for (item, is_max) in entries {
                if is_max {
                    rated_max[u].push(item);
                } else {
                    rated_other[u].push(item);
                }
            }
        }
    }

    let mut rng = stream(seed, "hr-at-1");
    let mut hits = 0usize;
    let mut eligible = 0usize;
    let mut skipped = 0usize;
    for u in 0..n_users as u32 {
        let positives = &rated_max[u as usize];
        let negatives = &rated_other[u as usize];
        if positives.is_empty() && negatives.is_empty() {
            continue; // not a test user
        }
        if positives.is_empty() || negatives.len() < 5 {
            skipped += 1;
            continue;
        }
        eligible += 1;
        let pos = positives[rng.random_range(0..positives.len())];
        let mut negs = negatives.clone();
        negs.shuffle(&mut rng);
        negs.truncate(5);
        let pos_score = score(u, pos);
        let hit = negs.iter().all(|&n| pos_score > score(u, n));
        hits += hit as usize;
    }
    if eligible == 0 {
        Hr1Result::NotApplicable { skipped }
    } else {
        Hr1Result::Applicable {
            rate: hits as f64 / eligible as f64,
            eligible,
            skipped,
        }
    }
}

/// One item-frequency bucket of the improvement curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    /// Inclusive training-frequency range.
    pub lo: u32,
    pub hi: u32,
    /// Distinct test items whose training frequency falls in range.
    pub item_count: usize,
    /// Test interactions on those items.
    pub interaction_count: usize,
    /// MSE(bias) − MSE(model) over those interactions (0 when empty).
    pub improvement: f64,
}

/// Log-spaced frequency bucket boundaries covering `0..=max_freq`:
/// {0}, {1}, {2}, {3–4}, {5–8}, {9–16}, doubling onward.
fn bucket_ranges(max_freq: u32) -> Vec<(u32, u32)> {
    let mut ranges = vec![(0u32, 0u32), (1, 1), (2, 2)];
    let mut lo = 3u32;
    let mut hi = 4u32;
    while lo <= max_freq {
        ranges.push((lo, hi));
        lo = hi + 1;
        hi = hi.saturating_mul(2);
    }
    ranges.retain(|&(lo, _)| lo <= max_freq.max(2));
    ranges
}

/// Groups test items by training-set frequency and reports, per
/// bucket, how much the model improves on the bias baseline
/// (MSE(bias) − MSE(model), higher is better). Raw buckets; smoothing
/// is a plotting concern.
pub fn bucket_improvement(
    model_preds: &[f64],
    bias_preds: &[f64],
    split: &SplitDataset,
) -> Result<Vec<Bucket>, EvalError> {
    let test = split.part(Part::Test);
    if model_preds.len() != test.len() || bias_preds.len() != test.len() {
        return Err(EvalError::LengthMismatch {
            preds: model_preds.len(),
            truths: test.len(),
        });
    }
    let n_items = split.data().n_items();
    let mut train_freq = vec![0u32; n_items];
    for it in split.train().iter() {
        train_freq[it.item as usize] += 1;
    }

    let mut test_items: Vec<u32> = test.iter().map(|it| it.item).collect();
    test_items.sort_unstable();
    test_items.dedup();
    let max_freq = test_items
        .iter()
        .map(|&i| train_freq[i as usize])
        .max()
        .unwrap_or(0);

    let ranges = bucket_ranges(max_freq);
    let find_bucket = |freq: u32| ranges.iter().position(|&(lo, hi)| freq >= lo && freq <= hi);

    let mut buckets: Vec<Bucket> = ranges
        .iter()
        .map(|&(lo, hi)| Bucket {
            lo,
            hi,
            item_count: 0,
            interaction_count: 0,
            improvement: 0.0,
        })
        .collect();
    for &item in &test_items {
        if let Some(b) = find_bucket(train_freq[item as usize]) {
            buckets[b].item_count += 1;
        }
    }
    let mut sse_model = vec![0.0f64; ranges.len()];
    let mut sse_bias = vec![0.0f64; ranges.len()];
    for (pos, it) in test.iter().enumerate() {
        if let Some(b) = find_bucket(train_freq[it.item as usize]) {
            buckets[b].interaction_count += 1;
            let dm = model_preds[pos] - it.rating;
            let db = bias_preds[pos] - it.rating;
            sse_model[b] += dm * dm;
            sse_bias[b] += db * db;
        }
    }
    for (b, bucket) in buckets.iter_mut().enumerate() {
        if bucket.interaction_count > 0 {
            let n = bucket.interaction_count as f64;
            bucket.improvement = (sse_bias[b] - sse_model[b]) / n;
        }
    }
    Ok(buckets)
}

/// Metric bundle for one (dataset, k, mask, model, config, seed) cell;
/// the unit serialized into report CSVs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset_hash: String,
    pub model: ModelKind,
    pub config_id: String,
    pub latent_dim: usize,
    pub l2: f64,
    pub dropout: f64,
    pub seed: u64,
    pub k_core: u32,
    pub mask_pct: f64,
    pub val_mse: f64,
    pub test_mse: f64,
    pub hr_at_1: Option<Hr1Result>,
    pub buckets: Vec<Bucket>,
}
