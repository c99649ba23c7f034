use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::corpus::PartView;

/// Reserved id for padding; its embedding row stays all-zero.
pub const PAD: u32 = 0;
/// Reserved id for out-of-vocabulary tokens.
pub const OOV: u32 = 1;

/// Token to id map capped at the most frequent training tokens
/// (default cap 50,000, so at most 50,002 ids including PAD and OOV).
#[derive(Debug, Clone)]
pub struct Vocab {
    /// lexicon id -> vocab id (OOV for dropped tokens)
    map: Vec<u32>,
    /// vocab id -> display token
    tokens: Vec<String>,
}

impl Vocab {
    /// Builds the vocabulary from the training partition only: the
    /// `cap` most frequent tokens are retained, ties at the boundary
    /// broken lexicographically (smaller token wins).
    pub fn build(train: &PartView<'_>, cap: usize) -> Vocab {
        let lexicon = &train.data().lexicon;
        let mut freq: HashMap<u32, u64> = HashMap::new();
        for it in train.iter() {
            for &tok in &it.review {
                *freq.entry(tok).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(u64, &str, u32)> = freq
            .iter()
            .map(|(&lex_id, &count)| (count, lexicon.get(lex_id), lex_id))
            .collect();
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        ranked.truncate(cap);

        let mut map = vec![OOV; lexicon.len()];
        let mut tokens = Vec::with_capacity(ranked.len() + 2);
        tokens.push("<pad>".to_string());
        tokens.push("<oov>".to_string());
        for (vocab_id, (_, tok, lex_id)) in ranked.iter().enumerate() {
            map[*lex_id as usize] = (vocab_id + 2) as u32;
            tokens.push((*tok).to_string());
        }
        Vocab { map, tokens }
    }

    /// Total id count including PAD and OOV.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Maps one lexicon id to its vocab id (OOV when dropped or when
    /// the lexicon grew after the vocabulary was built).
    pub fn encode_token(&self, lexicon_id: u32) -> u32 {
        self.map.get(lexicon_id as usize).copied().unwrap_or(OOV)
    }

    pub fn encode(&self, review: &[u32]) -> Vec<u32> {
        review.iter().map(|&t| self.encode_token(t)).collect()
    }

    /// Content hash used by checkpoint manifests.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for tok in &self.tokens {
            hasher.update(tok.as_bytes());
            hasher.update([0u8]);
        }
        hex_prefix(&hasher.finalize())
    }

    /// One token per line, in id order (`<pad>` and `<oov>` first).
    pub fn write(&self, path: &std::path::Path) -> Result<(), super::TextError> {
        let body = self.tokens.join("\n");
        std::fs::write(path, body).map_err(|source| super::TextError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Rebuilds a vocabulary from its token list against the lexicon
    /// it was built from.
    pub fn read(
        path: &std::path::Path,
        lexicon: &crate::corpus::Lexicon,
    ) -> Result<Vocab, super::TextError> {
        let body = std::fs::read_to_string(path).map_err(|source| super::TextError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let tokens: Vec<String> = body.lines().map(str::to_string).collect();
        if tokens.len() < 2 || tokens[0] != "<pad>" || tokens[1] != "<oov>" {
            return Err(super::TextError::Corrupt {
                path: path.display().to_string(),
                reason: "missing <pad>/<oov> header tokens".into(),
            });
        }
        let mut map = vec![OOV; lexicon.len()];
        for (vocab_id, tok) in tokens.iter().enumerate().skip(2) {
            if let Some(lex_id) = lexicon.lookup(tok) {
                map[lex_id as usize] = vocab_id as u32;
            }
        }
        Ok(Vocab { map, tokens })
    }
}

pub(crate) fn hex_prefix(digest: &[u8]) -> String {
    digest[..16].iter().map(|b| format!("{b:02x}")).collect()
}

/// Caps for the per-review document layout, both taken from the
/// training partition at the 98th percentile (nearest-rank).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LengthCaps {
    /// Tokens kept per review (L).
    pub review_len: usize,
    /// Reviews kept per entity (R).
    pub review_count: usize,
}

fn nearest_rank(mut values: Vec<usize>, pct: f64) -> usize {
    assert!(!values.is_empty());
    values.sort_unstable();
    let rank = ((pct / 100.0) * values.len() as f64).ceil() as usize;
    values[rank.clamp(1, values.len()) - 1]
}

/// L = 98th percentile of per-review token counts; R = 98th percentile
/// of per-entity review counts, with user and item counts pooled.
/// Both are clamped to at least 1 so document shapes stay valid when
/// every training review is empty (full masking).
pub fn length_caps(train: &PartView<'_>) -> LengthCaps {
    assert!(
        !train.is_empty(),
        "length caps need a nonempty training partition"
    );
    let lengths: Vec<usize> = train.iter().map(|it| it.review.len()).collect();

    let mut user_counts: HashMap<u32, usize> = HashMap::new();
    let mut item_counts: HashMap<u32, usize> = HashMap::new();
    for it in train.iter() {
        *user_counts.entry(it.user).or_insert(0) += 1;
        *item_counts.entry(it.item).or_insert(0) += 1;
    }
    let pooled: Vec<usize> = user_counts
        .values()
        .chain(item_counts.values())
        .copied()
        .collect();

    LengthCaps {
        review_len: nearest_rank(lengths, 98.0).max(1),
        review_count: nearest_rank(pooled, 98.0).max(1),
    }
}
