//! Skip-gram with negative sampling, trained in-process so embedding
//! tables are deterministic given a seed.
//!
//! Table file layout: magic `RBEMB1\n\0`, |V| u64, dim u64, rows as
//! f64 little-endian, then the sidecar token list (u64 count,
//! length-prefixed UTF-8 strings).

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::vocab::{hex_prefix, Vocab, PAD};
use super::TextError;
use crate::binio::*;
use crate::corpus::PartView;
use crate::stream;

const EMB_MAGIC: &[u8] = b"RBEMB1\n\0";

#[derive(Debug, Clone, Copy)]
pub struct SgnsConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub initial_lr: f64,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            window: 5,
            negatives: 5,
            epochs: 5,
            initial_lr: 0.025,
        }
    }
}

/// Dense `|V| × d` table of word vectors. Row [`PAD`] is pinned to
/// zero and never trained.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    rows: Vec<f64>,
    tokens: Vec<String>,
}

impl EmbeddingTable {
    pub fn zeros(n_rows: usize, dim: usize, tokens: Vec<String>) -> Self {
        assert_eq!(tokens.len(), n_rows);
        Self {
            dim,
            rows: vec![0.0; n_rows * dim],
            tokens,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn row(&self, id: u32) -> &[f64] {
        let d = self.dim;
        &self.rows[id as usize * d..(id as usize + 1) * d]
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn cosine(&self, a: u32, b: u32) -> f64 {
        let (ra, rb) = (self.row(a), self.row(b));
        let dot: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
        let na: f64 = ra.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = rb.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }

    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for v in &self.rows {
            hasher.update(v.to_le_bytes());
        }
        hex_prefix(&hasher.finalize())
    }

    pub fn write(&self, path: &Path) -> Result<(), TextError> {
        let io_err = |source| TextError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        (|| -> std::io::Result<()> {
            w.write_all(EMB_MAGIC)?;
            write_u64(&mut w, self.tokens.len() as u64)?;
            write_u64(&mut w, self.dim as u64)?;
            for v in &self.rows {
                write_f64(&mut w, *v)?;
            }
            write_u64(&mut w, self.tokens.len() as u64)?;
            for tok in &self.tokens {
                write_str(&mut w, tok)?;
            }
            w.flush()
        })()
        .map_err(io_err)
    }

    pub fn read(path: &Path) -> Result<Self, TextError> {
        let mut r = BufReader::new(File::open(path).map_err(|source| TextError::Io {
            path: path.display().to_string(),
            source,
        })?);
        (|| -> std::io::Result<Self> {
            expect_magic(&mut r, EMB_MAGIC)?;
            let n = read_u64(&mut r)? as usize;
            let dim = read_u64(&mut r)? as usize;
            let mut rows = Vec::with_capacity(n * dim);
            for _ in 0..n * dim {
                rows.push(read_f64(&mut r)?);
            }
            let n_tokens = read_u64(&mut r)? as usize;
            let mut tokens = Vec::with_capacity(n_tokens);
            for _ in 0..n_tokens {
                tokens.push(read_str(&mut r)?);
            }
            Ok(Self { dim, rows, tokens })
        })()
        .map_err(|e| TextError::Corrupt {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

/// Cumulative unigram^0.75 table for negative sampling.
struct NegativeTable {
    cumulative: Vec<f64>,
}

impl NegativeTable {
    fn new(counts: &[u64]) -> Self {
        let mut cumulative = Vec::with_capacity(counts.len());
        let mut total = 0.0;
        for &c in counts {
            total += (c as f64).powf(0.75);
            cumulative.push(total);
        }
        Self { cumulative }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u32 {
        let total = *self.cumulative.last().unwrap();
        let x: f64 = rng.random_range(0.0..total);
        self.cumulative.partition_point(|&c| c <= x) as u32
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Trains skip-gram-with-negative-sampling vectors on the training
/// reviews. Deterministic given the seed; the padding row stays zero.
pub fn train_embeddings(
    train: &PartView<'_>,
    vocab: &Vocab,
    cfg: &SgnsConfig,
    seed: u64,
) -> Result<EmbeddingTable, TextError> {
    let sentences: Vec<Vec<u32>> = train
        .iter()
        .filter(|it| !it.review.is_empty())
        .map(|it| vocab.encode(&it.review))
        .collect();
    let total_tokens: usize = sentences.iter().map(Vec::len).sum();
    if total_tokens == 0 {
        return Err(TextError::EmptyCorpus);
    }

    let n_rows = vocab.len();
    let dim = cfg.dim;
    let mut counts = vec![0u64; n_rows];
    for s in &sentences {
        for &t in s {
            counts[t as usize] += 1;
        }
    }
    counts[PAD as usize] = 0;
    let table = NegativeTable::new(&counts);

    let mut rng = stream(seed, "sgns");
    let mut input = vec![0.0f64; n_rows * dim];
    let half = 0.5 / dim as f64;
    for (row, chunk) in input.chunks_mut(dim).enumerate() {
        if row == PAD as usize {
            continue;
        }
        for v in chunk.iter_mut() {
            *v = rng.random_range(-half..half);
        }
    }
    let mut output = vec![0.0f64; n_rows * dim];

    let schedule_total = (cfg.epochs * total_tokens) as f64;
    let mut processed = 0usize;
    let lr_floor = cfg.initial_lr * 1e-4;
    let mut grad_in = vec![0.0f64; dim];

    for _epoch in 0..cfg.epochs {
        for sentence in &sentences {
            for (pos, &center) in sentence.iter().enumerate() {
                let lr = (cfg.initial_lr * (1.0 - processed as f64 / schedule_total)).max(lr_floor);
                processed += 1;
                // word2vec-style reduced window
                let span = rng.random_range(1..=cfg.window);
                let lo = pos.saturating_sub(span);
                let hi = (pos + span).min(sentence.len() - 1);
                for ctx_pos in lo..=hi {
                    if ctx_pos == pos {
                        continue;
                    }
                    let context = sentence[ctx_pos];
                    let in_off = center as usize * dim;
                    grad_in.iter_mut().for_each(|g| *g = 0.0);
                    for neg in 0..=cfg.negatives {
                        let (target, label) = if neg == 0 {
                            (context, 1.0)
                        } else {
                            let s = table.sample(&mut rng);
                            if s == context {
                                continue;
                            }
                            (s, 0.0)
                        };
                        let out_off = target as usize * dim;
                        let mut dot = 0.0;
                        for d in 0..dim {
                            dot += input[in_off + d] * output[out_off + d];
                        }
                        let g = (label - sigmoid(dot)) * lr;
                        for d in 0..dim {
                            grad_in[d] += g * output[out_off + d];
                            output[out_off + d] += g * input[in_off + d];
                        }
                    }
                    for d in 0..dim {
                        input[in_off + d] += grad_in[d];
                    }
                }
            }
        }
    }

    // padding row is pinned to zero by construction; enforce anyway
    for d in 0..dim {
        input[PAD as usize * dim + d] = 0.0;
    }

    Ok(EmbeddingTable {
        dim,
        rows: input,
        tokens: vocab.tokens().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Dataset, DatasetBuilder, PartView};
    use std::sync::Arc;

    fn corpus(sentences: &[Vec<&str>]) -> Arc<Dataset> {
        let mut b = DatasetBuilder::new();
        for (k, s) in sentences.iter().enumerate() {
            b.push(&format!("u{k}"), &format!("i{}", k % 2), 3.0, s);
        }
        Arc::new(b.build())
    }

    #[test]
    fn table_has_vocab_by_dim_shape() {
        let data = corpus(&[vec!["a", "b", "c"], vec!["a", "c", "b"]]);
        let idx: Vec<u32> = (0..data.len() as u32).collect();
        let view = PartView::new(&data, &idx);
        let vocab = Vocab::build(&view, 100);
        let cfg = SgnsConfig {
            dim: 64,
            epochs: 1,
            ..Default::default()
        };
        let table = train_embeddings(&view, &vocab, &cfg, 3).unwrap();
        assert_eq!(table.len(), vocab.len());
        assert_eq!(table.dim(), 64);
        assert_eq!(table.rows().len(), vocab.len() * 64);
    }

    #[test]
    fn co_occurring_tokens_end_up_closer() {
        // A and B always co-occur; C appears in unrelated contexts.
        let mut sentences: Vec<Vec<&str>> = Vec::new();
        let fillers = ["f0", "f1", "f2", "f3", "f4", "f5", "f6", "f7"];
        for k in 0..300usize {
            sentences.push(vec!["aa", "bb"]);
            sentences.push(vec!["cc", fillers[k % 8], fillers[(k * 3 + 1) % 8]]);
        }
        let data = corpus(&sentences);
        let idx: Vec<u32> = (0..data.len() as u32).collect();
        let view = PartView::new(&data, &idx);
        let vocab = Vocab::build(&view, 100);
        let cfg = SgnsConfig {
            dim: 16,
            epochs: 5,
            ..Default::default()
        };
        let table = train_embeddings(&view, &vocab, &cfg, 11).unwrap();
        let id = |t: &str| {
            let lex = data.lexicon.lookup(t).unwrap();
            vocab.encode_token(lex)
        };
        let ab = table.cosine(id("aa"), id("bb"));
        let ac = table.cosine(id("aa"), id("cc"));
        assert!(ab > ac, "cosine(A,B)={ab} should exceed cosine(A,C)={ac}");
    }

    #[test]
    fn same_seed_is_bitwise_identical_and_pad_row_zero() {
        let data = corpus(&[
            vec!["x", "y", "z", "x"],
            vec!["y", "z", "q"],
            vec!["z", "q", "x"],
        ]);
        let idx: Vec<u32> = (0..data.len() as u32).collect();
        let view = PartView::new(&data, &idx);
        let vocab = Vocab::build(&view, 100);
        let cfg = SgnsConfig {
            dim: 8,
            epochs: 3,
            ..Default::default()
        };
        let a = train_embeddings(&view, &vocab, &cfg, 5).unwrap();
        let b = train_embeddings(&view, &vocab, &cfg, 5).unwrap();
        assert_eq!(a.rows(), b.rows());
        assert!(a.row(PAD).iter().all(|&v| v == 0.0));
        let c = train_embeddings(&view, &vocab, &cfg, 6).unwrap();
        assert_ne!(a.rows(), c.rows());
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let data = corpus(&[vec![], vec![]]);
        let idx: Vec<u32> = (0..data.len() as u32).collect();
        let view = PartView::new(&data, &idx);
        let vocab = Vocab::build(&view, 100);
        assert!(matches!(
            train_embeddings(&view, &vocab, &SgnsConfig::default(), 1),
            Err(TextError::EmptyCorpus)
        ));
    }

    #[test]
    fn embedding_file_round_trips() {
        let data = corpus(&[vec!["m", "n", "o"]]);
        let idx: Vec<u32> = (0..data.len() as u32).collect();
        let view = PartView::new(&data, &idx);
        let vocab = Vocab::build(&view, 100);
        let cfg = SgnsConfig {
            dim: 4,
            epochs: 1,
            ..Default::default()
        };
        let table = train_embeddings(&view, &vocab, &cfg, 9).unwrap();
        let path = std::env::temp_dir().join(format!("revbench-emb-{}.bin", std::process::id()));
        table.write(&path).unwrap();
        let back = EmbeddingTable::read(&path).unwrap();
        assert_eq!(back, table);
        let _ = std::fs::remove_file(&path);
    }
}
