use super::vocab::{LengthCaps, Vocab, PAD};
use crate::corpus::SplitDataset;

/// Counterpart slot value for padding review slots.
pub const NO_COUNTERPART: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocLayout {
    /// One concatenated sequence per entity, capped/padded to
    /// `concat_len` tokens.
    Concat,
    /// Up to R most recent reviews per entity, each capped/padded to L
    /// tokens.
    PerReview,
}

#[derive(Debug, Clone, Copy)]
pub struct DocCaps {
    pub concat_len: usize,
    pub per_review: LengthCaps,
}

impl DocCaps {
    pub fn new(concat_len: usize, per_review: LengthCaps) -> Self {
        Self {
            concat_len,
            per_review,
        }
    }
}

/// Fixed-shape token store for one entity class (users or items).
#[derive(Debug, Clone)]
pub struct DocStore {
    n_entities: usize,
    reviews_per_entity: usize,
    tokens_per_review: usize,
    tokens: Vec<u32>,
    /// Per review slot, the dense index of the other endpoint of the
    /// interaction the review came from ([`NO_COUNTERPART`] for padding
    /// slots). Used by attention keys.
    counterparts: Vec<u32>,
    /// Per entity, how many slots hold at least one non-padding token.
    filled: Vec<u32>,
}

impl DocStore {
    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn reviews_per_entity(&self) -> usize {
        self.reviews_per_entity
    }

    pub fn tokens_per_review(&self) -> usize {
        self.tokens_per_review
    }

    /// All tokens of one entity (length R×L, or the concat cap).
    pub fn doc(&self, entity: u32) -> &[u32] {
        let stride = self.reviews_per_entity * self.tokens_per_review;
        &self.tokens[entity as usize * stride..(entity as usize + 1) * stride]
    }

    pub fn review(&self, entity: u32, slot: usize) -> &[u32] {
        let l = self.tokens_per_review;
        let base = entity as usize * self.reviews_per_entity * l + slot * l;
        &self.tokens[base..base + l]
    }

    pub fn counterpart(&self, entity: u32, slot: usize) -> u32 {
        self.counterparts[entity as usize * self.reviews_per_entity + slot]
    }

    pub fn filled_reviews(&self, entity: u32) -> usize {
        self.filled[entity as usize] as usize
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }
}

/// Per-user and per-item training review documents.
#[derive(Debug, Clone)]
pub struct ReviewDocs {
    pub layout: DocLayout,
    pub users: DocStore,
    pub items: DocStore,
}

struct EntityReviews {
    /// (tokens, counterpart) per training review, in input order.
    reviews: Vec<(Vec<u32>, u32)>,
}

fn collect_training_reviews(
    split: &SplitDataset,
    vocab: &Vocab,
) -> (Vec<EntityReviews>, Vec<EntityReviews>) {
    let data = split.data();
    let mut users: Vec<EntityReviews> = (0..data.n_users())
        .map(|_| EntityReviews {
            reviews: Vec::new(),
        })
        .collect();
    let mut items: Vec<EntityReviews> = (0..data.n_items())
        .map(|_| EntityReviews {
            reviews: Vec::new(),
        })
        .collect();
    // iterate in original interaction order so "most recent" is
    // well-defined when the file is chronological
    let mut in_train = vec![false; data.len()];
    for &idx in split.train().indices() {
        in_train[idx as usize] = true;
    }
    for (pos, it) in data.interactions.iter().enumerate() {
        if !in_train[pos] {
            continue;
        }
        let encoded = vocab.encode(&it.review);
        users[it.user as usize]
            .reviews
            .push((encoded.clone(), it.item));
        items[it.item as usize].reviews.push((encoded, it.user));
    }
    (users, items)
}

fn build_concat(entities: &[EntityReviews], cap: usize) -> DocStore {
    let mut tokens = vec![PAD; entities.len() * cap];
    let mut filled = vec![0u32; entities.len()];
    for (e, er) in entities.iter().enumerate() {
        let dst = &mut tokens[e * cap..(e + 1) * cap];
        let mut w = 0;
        'outer: for (review, _) in &er.reviews {
            for &tok in review {
                if w == cap {
                    break 'outer;
                }
                dst[w] = tok;
                w += 1;
            }
        }
        filled[e] = (w > 0) as u32;
    }
    DocStore {
        n_entities: entities.len(),
        reviews_per_entity: 1,
        tokens_per_review: cap,
        tokens,
        counterparts: Vec::new(),
        filled,
    }
}

fn build_per_review(entities: &[EntityReviews], caps: LengthCaps) -> DocStore {
    let (l, r) = (caps.review_len, caps.review_count);
    let mut tokens = vec![PAD; entities.len() * r * l];
    let mut counterparts = vec![NO_COUNTERPART; entities.len() * r];
    let mut filled = vec![0u32; entities.len()];
    for (e, er) in entities.iter().enumerate() {
        // keep the R most recent reviews, preserving input order
        let start = er.reviews.len().saturating_sub(r);
        let mut n_filled = 0u32;
        for (slot, (review, counterpart)) in er.reviews[start..].iter().enumerate() {
            let base = e * r * l + slot * l;
            let keep = review.len().min(l);
            tokens[base..base + keep].copy_from_slice(&review[..keep]);
            counterparts[e * r + slot] = *counterpart;
            if keep > 0 {
                n_filled += 1;
            }
        }
        filled[e] = n_filled;
    }
    DocStore {
        n_entities: entities.len(),
        reviews_per_entity: r,
        tokens_per_review: l,
        tokens,
        counterparts,
        filled,
    }
}

/// Assembles per-entity documents from training reviews only; tokens
/// from validation or test interactions never appear. Entities with no
/// training reviews get all-padding documents.
pub fn build_documents(
    split: &SplitDataset,
    vocab: &Vocab,
    caps: &DocCaps,
    layout: DocLayout,
) -> ReviewDocs {
    let (users, items) = collect_training_reviews(split, vocab);
    let (users, items) = match layout {
        DocLayout::Concat => (
            build_concat(&users, caps.concat_len),
            build_concat(&items, caps.concat_len),
        ),
        DocLayout::PerReview => (
            build_per_review(&users, caps.per_review),
            build_per_review(&items, caps.per_review),
        ),
    };
    ReviewDocs {
        layout,
        users,
        items,
    }
}

const DOCS_MAGIC: &[u8] = b"RBDOCS1\n";

impl DocStore {
    fn write_to<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        use crate::binio::*;
        write_u64(w, self.n_entities as u64)?;
        write_u64(w, self.reviews_per_entity as u64)?;
        write_u64(w, self.tokens_per_review as u64)?;
        for &t in &self.tokens {
            write_u32(w, t)?;
        }
        write_u64(w, self.counterparts.len() as u64)?;
        for &c in &self.counterparts {
            write_u32(w, c)?;
        }
        for &f in &self.filled {
            write_u32(w, f)?;
        }
        Ok(())
    }

    fn read_from<R: std::io::Read>(r: &mut R) -> std::io::Result<Self> {
        use crate::binio::*;
        let n_entities = read_u64(r)? as usize;
        let reviews_per_entity = read_u64(r)? as usize;
        let tokens_per_review = read_u64(r)? as usize;
        let count = n_entities * reviews_per_entity * tokens_per_review;
        let mut tokens = Vec::with_capacity(count);
        for _ in 0..count {
            tokens.push(read_u32(r)?);
        }
        let n_counter = read_u64(r)? as usize;
        let mut counterparts = Vec::with_capacity(n_counter);
        for _ in 0..n_counter {
            counterparts.push(read_u32(r)?);
        }
        let mut filled = Vec::with_capacity(n_entities);
        for _ in 0..n_entities {
            filled.push(read_u32(r)?);
        }
        Ok(DocStore {
            n_entities,
            reviews_per_entity,
            tokens_per_review,
            tokens,
            counterparts,
            filled,
        })
    }
}

impl ReviewDocs {
    pub fn write(&self, path: &std::path::Path) -> Result<(), super::TextError> {
        let io_err = |source| super::TextError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
        (|| -> std::io::Result<()> {
            use std::io::Write;
            w.write_all(DOCS_MAGIC)?;
            w.write_all(&[match self.layout {
                DocLayout::Concat => 0u8,
                DocLayout::PerReview => 1u8,
            }])?;
            self.users.write_to(&mut w)?;
            self.items.write_to(&mut w)?;
            w.flush()
        })()
        .map_err(io_err)
    }

    pub fn read(path: &std::path::Path) -> Result<Self, super::TextError> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path).map_err(|source| {
            super::TextError::Io {
                path: path.display().to_string(),
                source,
            }
        })?);
        (|| -> std::io::Result<Self> {
            use std::io::Read;
            crate::binio::expect_magic(&mut r, DOCS_MAGIC)?;
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag)?;
            let layout = match tag[0] {
                0 => DocLayout::Concat,
                1 => DocLayout::PerReview,
                other => {
                    return Err(std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("unknown layout tag {other}"),
                    ))
                }
            };
            let users = DocStore::read_from(&mut r)?;
            let items = DocStore::read_from(&mut r)?;
            Ok(ReviewDocs {
                layout,
                users,
                items,
            })
        })()
        .map_err(|e| super::TextError::Corrupt {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}
