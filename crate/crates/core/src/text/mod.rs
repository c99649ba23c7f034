//! Review text machinery: tokenization, capped vocabulary, length
//! statistics, skip-gram embeddings, and per-entity review documents.

mod docs;
mod embed;
mod tokenize;
mod vocab;

pub use docs::{build_documents, DocCaps, DocLayout, DocStore, ReviewDocs, NO_COUNTERPART};
pub use embed::{train_embeddings, EmbeddingTable, SgnsConfig};
pub use tokenize::tokenize;
pub use vocab::{length_caps, LengthCaps, Vocab, OOV, PAD};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("cannot train embeddings on an empty corpus")]
    EmptyCorpus,
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt embedding file {path}: {reason}")]
    Corrupt { path: String, reason: String },
}
