//! Binary cache for prepared datasets and splits.
//!
//! Dataset layout (all integers little-endian):
//!   magic `RBDSET1\n`, rating scale (2×f64), user keys, item keys,
//!   lexicon tokens, then interactions as (user u32, item u32,
//!   rating f64, token count u32, token ids u32…). String lists are a
//!   u64 count followed by length-prefixed UTF-8. Split layout: magic
//!   `RBSPLT1\n`, seed u64, then the three index lists.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use super::{CorpusError, Dataset, IdIndex, Interaction, Lexicon, RatingScale, SplitDataset};
use crate::binio::*;

const DATASET_MAGIC: &[u8] = b"RBDSET1\n";
const SPLIT_MAGIC: &[u8] = b"RBSPLT1\n";

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_dataset(data: &Dataset, path: &Path) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    (|| -> std::io::Result<()> {
        w.write_all(DATASET_MAGIC)?;
        write_f64(&mut w, data.rating_scale.min)?;
        write_f64(&mut w, data.rating_scale.max)?;
        write_u64(&mut w, data.n_users() as u64)?;
        for idx in 0..data.n_users() {
            write_str(&mut w, data.users.key(idx as u32))?;
        }
        write_u64(&mut w, data.n_items() as u64)?;
        for idx in 0..data.n_items() {
            write_str(&mut w, data.items.key(idx as u32))?;
        }
        write_u64(&mut w, data.lexicon.len() as u64)?;
        for tok in data.lexicon.tokens() {
            write_str(&mut w, tok)?;
        }
        write_u64(&mut w, data.len() as u64)?;
        for it in &data.interactions {
            write_u32(&mut w, it.user)?;
            write_u32(&mut w, it.item)?;
            write_f64(&mut w, it.rating)?;
            write_u32(&mut w, it.review.len() as u32)?;
            for &t in &it.review {
                write_u32(&mut w, t)?;
            }
        }
        w.flush()
    })()
    .map_err(|e| io_err(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset, CorpusError> {
    let mut r = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    (|| -> std::io::Result<Dataset> {
        expect_magic(&mut r, DATASET_MAGIC)?;
        let min = read_f64(&mut r)?;
        let max = read_f64(&mut r)?;
        let n_users = read_u64(&mut r)? as usize;
        let mut users = IdIndex::default();
        for _ in 0..n_users {
            users.intern(&read_str(&mut r)?);
        }
        let n_items = read_u64(&mut r)? as usize;
        let mut items = IdIndex::default();
        for _ in 0..n_items {
            items.intern(&read_str(&mut r)?);
        }
        let n_tokens = read_u64(&mut r)? as usize;
        let mut lexicon = Lexicon::new();
        for _ in 0..n_tokens {
            lexicon.intern(&read_str(&mut r)?);
        }
        let n = read_u64(&mut r)? as usize;
        let mut interactions = Vec::with_capacity(n);
        for _ in 0..n {
            let user = read_u32(&mut r)?;
            let item = read_u32(&mut r)?;
            let rating = read_f64(&mut r)?;
            let len = read_u32(&mut r)? as usize;
            let mut review = Vec::with_capacity(len);
            for _ in 0..len {
                review.push(read_u32(&mut r)?);
            }
            interactions.push(Interaction {
                user,
                item,
                rating,
                review,
            });
        }
        Ok(Dataset {
            interactions,
            users,
            items,
            rating_scale: RatingScale::new(min, max),
            lexicon: Arc::new(lexicon),
        })
    })()
    .map_err(|e| CorpusError::Corrupt {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

pub fn write_split(split: &SplitDataset, path: &Path) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    (|| -> std::io::Result<()> {
        w.write_all(SPLIT_MAGIC)?;
        write_u64(&mut w, split.seed())?;
        for part in [
            split.train().indices(),
            split.validation().indices(),
            split.test().indices(),
        ] {
            write_u64(&mut w, part.len() as u64)?;
            for &idx in part {
                write_u32(&mut w, idx)?;
            }
        }
        w.flush()
    })()
    .map_err(|e| io_err(path, e))
}

pub fn read_split(path: &Path, data: Arc<Dataset>) -> Result<SplitDataset, CorpusError> {
    let mut r = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    (|| -> std::io::Result<SplitDataset> {
        expect_magic(&mut r, SPLIT_MAGIC)?;
        let seed = read_u64(&mut r)?;
        let mut parts: Vec<Vec<u32>> = Vec::with_capacity(3);
        for _ in 0..3 {
            let len = read_u64(&mut r)? as usize;
            let mut v = Vec::with_capacity(len);
            for _ in 0..len {
                v.push(read_u32(&mut r)?);
            }
            parts.push(v);
        }
        let test = parts.pop().unwrap();
        let validation = parts.pop().unwrap();
        let train = parts.pop().unwrap();
        Ok(SplitDataset::from_parts(
            data, train, validation, test, seed,
        ))
    })()
    .map_err(|e| CorpusError::Corrupt {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}
