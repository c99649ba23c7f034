//! Content-addressed preprocessing cache.
//!
//! One cache entry corresponds to one (dataset file, field map, scale,
//! k, split seed, mask) experiment point and holds the k-cored +
//! masked dataset, the split, the vocabulary, the embedding table, and
//! both document layouts. A stale cache can never be served for
//! changed inputs because the key hashes the raw input bytes and every
//! preprocessing knob.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExperimentConfig, HarnessError};
use crate::corpus::{
    load_interactions, read_dataset, read_split, split, write_dataset, write_split, Dataset,
    SplitDataset, Stats,
};
use crate::text::{
    build_documents, length_caps, train_embeddings, DocCaps, DocLayout, EmbeddingTable, LengthCaps,
    ReviewDocs, TextError, Vocab,
};

/// Cache key for one experiment point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrepKey(pub String);

impl PrepKey {
    pub fn compute(cfg: &ExperimentConfig, k: u32, mask_pct: f64) -> Result<Self, HarnessError> {
        let bytes = std::fs::read(&cfg.dataset).map_err(|e| HarnessError::io(&cfg.dataset, e))?;
        let mut h = Sha256::new();
        h.update(&bytes);
        let fm = &cfg.field_map;
        for part in [&fm.user, &fm.item, &fm.rating, &fm.review] {
            h.update(part.as_bytes());
            h.update([0]);
        }
        h.update(cfg.rating_scale.min.to_le_bytes());
        h.update(cfg.rating_scale.max.to_le_bytes());
        h.update(k.to_le_bytes());
        h.update(cfg.split_seed.to_le_bytes());
        h.update(mask_pct.to_le_bytes());
        h.update(cfg.mask_seed.to_le_bytes());
        h.update(cfg.vocab_cap.to_le_bytes());
        h.update(cfg.embed_dim.to_le_bytes());
        h.update(cfg.embed_window.to_le_bytes());
        h.update(cfg.embed_negatives.to_le_bytes());
        h.update(cfg.embed_epochs.to_le_bytes());
        h.update(cfg.embed_seed.to_le_bytes());
        h.update(cfg.concat_cap.to_le_bytes());
        let digest = h.finalize();
        Ok(PrepKey(
            digest[..16].iter().map(|b| format!("{b:02x}")).collect(),
        ))
    }

    pub fn dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        cfg.out_dir.join("cache").join(&self.0)
    }
}

/// Text-side artifacts derived from one training partition.
#[derive(Clone)]
pub struct TextArtifacts {
    pub vocab: Arc<Vocab>,
    pub caps: DocCaps,
    pub embeddings: Arc<EmbeddingTable>,
    pub docs_concat: Arc<ReviewDocs>,
    pub docs_per_review: Arc<ReviewDocs>,
}

/// Builds vocabulary, caps, embeddings, and both document layouts from
/// a split's training partition. A fully-masked corpus (no tokens)
/// yields a zero embedding table rather than an error, matching the
/// all-padding documents it implies.
pub fn text_artifacts(
    cfg: &ExperimentConfig,
    split: &SplitDataset,
) -> Result<TextArtifacts, HarnessError> {
    let vocab = Arc::new(Vocab::build(&split.train(), cfg.vocab_cap));
    let caps = DocCaps::new(cfg.concat_cap, length_caps(&split.train()));
    let embeddings = match train_embeddings(&split.train(), &vocab, &cfg.sgns(), cfg.embed_seed) {
        Ok(t) => Arc::new(t),
        Err(TextError::EmptyCorpus) => Arc::new(EmbeddingTable::zeros(
            vocab.len(),
            cfg.embed_dim,
            vocab.tokens().to_vec(),
        )),
        Err(e) => return Err(e.into()),
    };
    let docs_concat = Arc::new(build_documents(split, &vocab, &caps, DocLayout::Concat));
    let docs_per_review = Arc::new(build_documents(split, &vocab, &caps, DocLayout::PerReview));
    Ok(TextArtifacts {
        vocab,
        caps,
        embeddings,
        docs_concat,
        docs_per_review,
    })
}

/// Everything a training run needs for one experiment point.
pub struct PreparedData {
    pub dataset: Arc<Dataset>,
    pub split: Arc<SplitDataset>,
    pub arts: TextArtifacts,
    pub stats: Stats,
    pub dataset_hash: String,
    pub from_cache: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct PrepManifest {
    schema: String,
    dataset_hash: String,
    vocab_hash: String,
    embeddings_hash: String,
    stats: Stats,
    review_len_cap: usize,
    review_count_cap: usize,
    concat_cap: usize,
}

/// Builds (or loads from cache) the full preprocessing stack for one
/// (k-core, mask) point.
pub fn prep_point(
    cfg: &ExperimentConfig,
    k: u32,
    mask_pct: f64,
) -> Result<PreparedData, HarnessError> {
    let key = PrepKey::compute(cfg, k, mask_pct)?;
    let dir = key.dir(cfg);
    let manifest_path = dir.join("prep.json");
    if manifest_path.exists() {
        return load_cached(&dir);
    }
    std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;

    // load → k-core → split → mask
    let (raw, _report) = load_interactions(&cfg.dataset, &cfg.load_options())?;
    let core = raw.k_core(k);
    let base_split = split(Arc::new(core), cfg.split_seed)?;
    let masked = if mask_pct > 0.0 {
        base_split.mask_reviews(mask_pct, cfg.mask_seed)
    } else {
        base_split
    };
    let dataset = Arc::new(masked.data().clone());
    let split = Arc::new(SplitDataset::from_parts(
        Arc::clone(&dataset),
        masked.train().indices().to_vec(),
        masked.validation().indices().to_vec(),
        masked.test().indices().to_vec(),
        masked.seed(),
    ));
    let arts = text_artifacts(cfg, &split)?;

    write_dataset(&dataset, &dir.join("dataset.bin"))?;
    write_split(&split, &dir.join("split.bin"))?;
    arts.vocab.write(&dir.join("vocab.txt"))?;
    arts.embeddings.write(&dir.join("embeddings.bin"))?;
    arts.docs_concat.write(&dir.join("docs_concat.bin"))?;
    arts.docs_per_review
        .write(&dir.join("docs_per_review.bin"))?;

    let manifest = PrepManifest {
        schema: "revbench.prep.v1".into(),
        dataset_hash: dataset.content_hash(),
        vocab_hash: arts.vocab.hash(),
        embeddings_hash: arts.embeddings.hash(),
        stats: dataset.stats(),
        review_len_cap: arts.caps.per_review.review_len,
        review_count_cap: arts.caps.per_review.review_count,
        concat_cap: arts.caps.concat_len,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| HarnessError::Config(format!("manifest encode: {e}")))?;
    std::fs::write(&manifest_path, json).map_err(|e| HarnessError::io(&manifest_path, e))?;

    Ok(PreparedData {
        stats: dataset.stats(),
        dataset_hash: manifest.dataset_hash,
        dataset,
        split,
        arts,
        from_cache: false,
    })
}

fn load_cached(dir: &Path) -> Result<PreparedData, HarnessError> {
    let manifest_path = dir.join("prep.json");
    let body =
        std::fs::read_to_string(&manifest_path).map_err(|e| HarnessError::io(&manifest_path, e))?;
    let manifest: PrepManifest = serde_json::from_str(&body).map_err(|e| {
        HarnessError::Config(format!(
            "corrupt prep manifest {}: {e}",
            manifest_path.display()
        ))
    })?;
    let dataset = Arc::new(read_dataset(&dir.join("dataset.bin"))?);
    let split = Arc::new(read_split(&dir.join("split.bin"), Arc::clone(&dataset))?);
    let vocab = Arc::new(Vocab::read(&dir.join("vocab.txt"), &dataset.lexicon)?);
    let embeddings = Arc::new(EmbeddingTable::read(&dir.join("embeddings.bin"))?);
    let docs_concat = Arc::new(ReviewDocs::read(&dir.join("docs_concat.bin"))?);
    let docs_per_review = Arc::new(ReviewDocs::read(&dir.join("docs_per_review.bin"))?);
    let caps = DocCaps::new(
        manifest.concat_cap,
        LengthCaps {
            review_len: manifest.review_len_cap,
            review_count: manifest.review_count_cap,
        },
    );
    Ok(PreparedData {
        stats: manifest.stats,
        dataset_hash: manifest.dataset_hash,
        dataset,
        split,
        arts: TextArtifacts {
            vocab,
            caps,
            embeddings,
            docs_concat,
            docs_per_review,
        },
        from_cache: true,
    })
}
