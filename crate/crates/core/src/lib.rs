//! Benchmark harness for rating prediction with and without review text.
//!
//! The crate covers the full experimental loop: corpus ingestion and
//! k-core pruning, review tokenization and document assembly, a small
//! reverse-mode autodiff engine, the compared predictors (bias-only,
//! matrix factorization, HFT, NeuMF, DeepCoNN/DeepCoNN++, NARRE), and
//! the evaluation protocols (MSE, HR@1, frequency buckets, density and
//! masking sweeps).

pub mod autodiff;
pub mod corpus;
pub mod eval;
pub mod harness;
pub mod models;
pub mod oracle;
pub mod synth;
pub mod text;

mod binio;
mod rngstream;

pub use rngstream::stream;
