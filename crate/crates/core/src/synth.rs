//! Seeded synthetic corpora for benchmarks and tests.
//!
//! The planted-factor generator writes ratings from a known low-rank
//! model (`r = α + β_u + β_i + γ_u·γ_i + noise`, clipped to the scale);
//! the planted-topic variant additionally writes reviews whose tokens
//! are drawn from topic distributions aligned with the item factors,
//! so review text genuinely carries rating signal.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, DatasetBuilder, RatingScale, SplitDataset};
use crate::stream;

/// Planted low-rank rating model.
#[derive(Debug, Clone)]
pub struct PlantedConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_interactions: usize,
    pub true_dim: usize,
    pub global_mean: f64,
    pub bias_sd: f64,
    pub factor_sd: f64,
    /// Component-wise mean added to user factors with alternating
    /// sign; a nonzero shift gives item factors an additive,
    /// text-recoverable rating contribution.
    pub user_factor_shift: f64,
    pub noise_sd: f64,
    pub scale: RatingScale,
    /// Trailing items are held to a handful of appearances so a cold
    /// tail exists.
    pub cold_items: usize,
    pub cold_appearances_max: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            n_users: 2000,
            n_items: 300,
            n_interactions: 40_000,
            true_dim: 4,
            global_mean: 3.0,
            bias_sd: 0.35,
            factor_sd: 0.45,
            user_factor_shift: 0.0,
            noise_sd: 0.25,
            scale: RatingScale::new(1.0, 5.0),
            cold_items: 150,
            cold_appearances_max: 4,
            seed: 1,
        }
    }
}

/// Topic model aligned with the planted item factors: token topics are
/// drawn from `softmax(sharpness · γ_i)`, and each topic mixes its own
/// signature words with a shared filler pool.
#[derive(Debug, Clone)]
pub struct TopicTextConfig {
    pub signature_words: usize,
    pub filler_words: usize,
    /// Probability that a token is a signature word of its topic.
    pub signature_mass: f64,
    pub review_len: (usize, usize),
    pub sharpness: f64,
}

impl Default for TopicTextConfig {
    fn default() -> Self {
        Self {
            signature_words: 40,
            filler_words: 150,
            signature_mass: 0.5,
            review_len: (8, 15),
            sharpness: 3.0,
        }
    }
}

struct Truth {
    beta_user: Vec<f64>,
    beta_item: Vec<f64>,
    gamma_user: Vec<f64>,
    gamma_item: Vec<f64>,
}

fn normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * sd
}

fn draw_truth(cfg: &PlantedConfig, rng: &mut ChaCha8Rng) -> Truth {
    let d = cfg.true_dim;
    let beta_user = (0..cfg.n_users).map(|_| normal(rng, cfg.bias_sd)).collect();
    let beta_item = (0..cfg.n_items).map(|_| normal(rng, cfg.bias_sd)).collect();
    let gamma_user = (0..cfg.n_users * d)
        .map(|j| {
            let shift = if j % d % 2 == 0 {
                cfg.user_factor_shift
            } else {
                -cfg.user_factor_shift
            };
            shift + normal(rng, cfg.factor_sd)
        })
        .collect();
    let gamma_item = (0..cfg.n_items * d)
        .map(|_| normal(rng, cfg.factor_sd))
        .collect();
    Truth {
        beta_user,
        beta_item,
        gamma_user,
        gamma_item,
    }
}

/// (user, item) pairs with a warm head and a cold tail of items.
fn draw_pairs(cfg: &PlantedConfig, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let cold_start = cfg.n_items.saturating_sub(cfg.cold_items);
    let mut pairs = Vec::with_capacity(cfg.n_interactions);
    for item in cold_start..cfg.n_items {
        let appearances = rng.random_range(1..=cfg.cold_appearances_max.max(1));
        for _ in 0..appearances {
            pairs.push((rng.random_range(0..cfg.n_users), item));
        }
    }
    while pairs.len() < cfg.n_interactions {
        let user = rng.random_range(0..cfg.n_users);
        let item = rng.random_range(0..cold_start.max(1));
        pairs.push((user, item));
    }
    pairs.truncate(cfg.n_interactions);
    pairs.shuffle(rng);
    pairs
}

fn rating_for(cfg: &PlantedConfig, truth: &Truth, user: usize, item: usize, noise: f64) -> f64 {
    let d = cfg.true_dim;
    let dot: f64 = (0..d)
        .map(|j| truth.gamma_user[user * d + j] * truth.gamma_item[item * d + j])
        .sum();
    cfg.scale
        .clamp(cfg.global_mean + truth.beta_user[user] + truth.beta_item[item] + dot + noise)
}

/// Ratings only; every review is empty.
pub fn planted_factor(cfg: &PlantedConfig) -> Dataset {
    let mut rng = stream(cfg.seed, "planted-factor");
    let truth = draw_truth(cfg, &mut rng);
    let pairs = draw_pairs(cfg, &mut rng);
    let mut b = DatasetBuilder::new().rating_scale(cfg.scale);
    for (user, item) in pairs {
        let noise = normal(&mut rng, cfg.noise_sd);
        let rating = rating_for(cfg, &truth, user, item, noise);
        b.push(&format!("u{user}"), &format!("i{item}"), rating, &[]);
    }
    b.build()
}

/// Ratings plus reviews drawn from item-factor-aligned topics.
pub fn planted_topic(cfg: &PlantedConfig, text: &TopicTextConfig) -> Dataset {
    let mut rng = stream(cfg.seed, "planted-topic");
    let truth = draw_truth(cfg, &mut rng);
    let pairs = draw_pairs(cfg, &mut rng);
    let n_topics = cfg.true_dim;
    let d = cfg.true_dim;

    // per item topic distribution: softmax(sharpness · γ_i)
    let mut theta = vec![0.0f64; cfg.n_items * n_topics];
    for item in 0..cfg.n_items {
        let logits: Vec<f64> = (0..n_topics)
            .map(|t| text.sharpness * truth.gamma_item[item * d + t])
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        for t in 0..n_topics {
            theta[item * n_topics + t] = exps[t] / total;
        }
    }

    let mut b = DatasetBuilder::new().rating_scale(cfg.scale);
    let mut tokens: Vec<String> = Vec::new();
    for (user, item) in pairs {
        let noise = normal(&mut rng, cfg.noise_sd);
        let rating = rating_for(cfg, &truth, user, item, noise);
        let len = rng.random_range(text.review_len.0..=text.review_len.1);
        tokens.clear();
        for _ in 0..len {
            let draw: f64 = rng.random_range(0.0..1.0);
            let mut topic = n_topics - 1;
            let mut acc = 0.0;
            for t in 0..n_topics {
                acc += theta[item * n_topics + t];
                if draw < acc {
                    topic = t;
                    break;
                }
            }
            if rng.random_range(0.0..1.0) < text.signature_mass {
                let w = rng.random_range(0..text.signature_words);
                tokens.push(format!("sig{topic}w{w}"));
            } else {
                let w = rng.random_range(0..text.filler_words);
                tokens.push(format!("fill{w}"));
            }
        }
        let refs: Vec<&str> = tokens.iter().map(String::as_str).collect();
        b.push(&format!("u{user}"), &format!("i{item}"), rating, &refs);
    }
    b.build()
}

/// Split whose test partition makes `n_users` users HR@1-eligible:
/// each has one uniquely max-rated test item and five distinct
/// lower-rated test items (plus one training interaction).
pub fn hr_calibration_split(n_users: usize, seed: u64) -> SplitDataset {
    let mut rng = stream(seed, "hr-fixture");
    let mut b = DatasetBuilder::new().rating_scale(RatingScale::new(1.0, 5.0));
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut pos = 0u32;
    for u in 0..n_users {
        let user = format!("u{u}");
        // one training interaction
        b.push(
            &user,
            &format!("i{}", rng.random_range(0..n_users * 7)),
            3.0,
            &[],
        );
        train.push(pos);
        pos += 1;
        // six test interactions on distinct items: one max, five not
        let base = u * 7;
        b.push(&user, &format!("i{base}"), 5.0, &[]);
        test.push(pos);
        pos += 1;
        for j in 1..6 {
            let rating = 1.0 + ((u + j) % 4) as f64; // 1..=4, never max
            b.push(&user, &format!("i{}", base + j), rating, &[]);
            test.push(pos);
            pos += 1;
        }
    }
    SplitDataset::from_parts(
        std::sync::Arc::new(b.build()),
        train,
        Vec::new(),
        test,
        seed,
    )
}

/// Bipartite cycle: every node has degree exactly 2, so the 1- and
/// 2-cores equal the whole graph and the 3-core is empty.
pub fn bipartite_cycle(n: usize) -> Dataset {
    let mut b = DatasetBuilder::new();
    for k in 0..n {
        b.push(&format!("u{k}"), &format!("i{k}"), 3.0, &[]);
        b.push(&format!("u{k}"), &format!("i{}", (k + 1) % n), 4.0, &[]);
    }
    b.build()
}

/// Writes a dataset back out as newline-delimited JSON with the
/// default field names; review text is the lexicon tokens joined by
/// spaces.
pub fn write_ndjson(data: &Dataset, path: &Path) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for it in &data.interactions {
        let text = data.review_text(it).join(" ");
        let record = serde_json::json!({
            "reviewerID": data.users.key(it.user),
            "asin": data.items.key(it.item),
            "overall": it.rating,
            "reviewText": text,
        });
        writeln!(f, "{record}")?;
    }
    Ok(())
}
