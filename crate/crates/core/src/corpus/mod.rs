//! Interaction datasets: ingestion, indexing, k-core pruning, splits,
//! and review masking.
//!
//! All operations here are pure functions over immutable inputs; none
//! of them mutates a [`Dataset`] in place.

mod cache;
mod load;
mod split;

pub use cache::{read_dataset, read_split, write_dataset, write_split};
pub use load::{load_interactions, FieldMap, LoadOptions, LoadReport};
pub use split::{split, Part, PartView, SplitDataset};

use std::collections::HashMap;
use std::collections::VecDeque;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset has {len} interactions, need at least {min} to split")]
    TooSmall { len: usize, min: usize },
    #[error("corrupt cache file {path}: {reason}")]
    Corrupt { path: String, reason: String },
}

/// Inclusive rating range declared by a dataset (e.g. 1.0..=5.0 stars).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingScale {
    pub min: f64,
    pub max: f64,
}

impl RatingScale {
    pub fn new(min: f64, max: f64) -> Self {
        assert!(min < max, "rating scale must be non-degenerate");
        Self { min, max }
    }

    pub fn contains(&self, r: f64) -> bool {
        r >= self.min && r <= self.max
    }

    pub fn clamp(&self, r: f64) -> f64 {
        r.clamp(self.min, self.max)
    }
}

impl Default for RatingScale {
    fn default() -> Self {
        Self { min: 1.0, max: 5.0 }
    }
}

/// Token interner shared by every dataset derived from one corpus.
///
/// Reviews are stored as sequences of lexicon ids so that sub-datasets
/// (k-cores, masked copies) can share one string table.
#[derive(Debug, Default, Clone)]
pub struct Lexicon {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn get(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn lookup(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// One (user, item, rating, review) tuple with dense indices and the
/// review as lexicon token ids. An empty review is a legal value.
#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub rating: f64,
    pub review: Vec<u32>,
}

/// External id to dense index mapping, in first-seen order.
#[derive(Debug, Default, Clone)]
pub struct IdIndex {
    keys: Vec<String>,
    index: HashMap<String, u32>,
}

impl IdIndex {
    pub fn intern(&mut self, key: &str) -> u32 {
        if let Some(&id) = self.index.get(key) {
            return id;
        }
        let id = self.keys.len() as u32;
        self.keys.push(key.to_string());
        self.index.insert(key.to_string(), id);
        id
    }

    pub fn key(&self, idx: u32) -> &str {
        &self.keys[idx as usize]
    }

    pub fn get(&self, key: &str) -> Option<u32> {
        self.index.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// Corpus statistics as reported alongside results: interaction count,
/// distinct users, distinct items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Stats {
    pub reviews: usize,
    pub users: usize,
    pub items: usize,
}

/// An indexed interaction collection.
///
/// Invariants: dense user indices are exactly `0..users.len()` and item
/// indices `0..items.len()`, each referenced by at least one
/// interaction.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub interactions: Vec<Interaction>,
    pub users: IdIndex,
    pub items: IdIndex,
    pub rating_scale: RatingScale,
    pub lexicon: Arc<Lexicon>,
}

impl Dataset {
    pub fn empty(scale: RatingScale) -> Self {
        Self {
            interactions: Vec::new(),
            users: IdIndex::default(),
            items: IdIndex::default(),
            rating_scale: scale,
            lexicon: Arc::new(Lexicon::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn stats(&self) -> Stats {
        Stats {
            reviews: self.interactions.len(),
            users: self.users.len(),
            items: self.items.len(),
        }
    }

    /// Maximal sub-dataset in which every user and every item takes
    /// part in at least `k` interactions, found by cascading deletion.
    ///
    /// `k = 0` returns an identical copy; an empty result is returned
    /// as an empty dataset, not an error.
    pub fn k_core(&self, k: u32) -> Dataset {
        if k == 0 {
            return self.clone();
        }
        let n_users = self.n_users();
        let n_items = self.n_items();
        let mut user_deg = vec![0u32; n_users];
        let mut item_deg = vec![0u32; n_items];
        let mut user_edges: Vec<Vec<u32>> = vec![Vec::new(); n_users];
        let mut item_edges: Vec<Vec<u32>> = vec![Vec::new(); n_items];
        for (ei, it) in self.interactions.iter().enumerate() {
            user_deg[it.user as usize] += 1;
            item_deg[it.item as usize] += 1;
            user_edges[it.user as usize].push(ei as u32);
            item_edges[it.item as usize].push(ei as u32);
        }

        #[derive(Clone, Copy)]
        enum Node {
            User(u32),
            Item(u32),
        }

        let mut edge_alive = vec![true; self.interactions.len()];
        let mut user_dead = vec![false; n_users];
        let mut item_dead = vec![false; n_items];
        let mut queue: VecDeque<Node> = VecDeque::new();
        for u in 0..n_users {
            if user_deg[u] < k {
                queue.push_back(Node::User(u as u32));
            }
        }
        for i in 0..n_items {
            if item_deg[i] < k {
                queue.push_back(Node::Item(i as u32));
            }
        }
        while let Some(node) = queue.pop_front() {
            match node {
                Node::User(u) => {
                    let u = u as usize;
                    if user_dead[u] {
                        continue;
                    }
                    user_dead[u] = true;
                    for &ei in &user_edges[u] {
                        let ei = ei as usize;
                        if !edge_alive[ei] {
                            continue;
                        }
                        edge_alive[ei] = false;
                        let i = self.interactions[ei].item as usize;
                        item_deg[i] -= 1;
                        if item_deg[i] < k && !item_dead[i] {
                            queue.push_back(Node::Item(i as u32));
                        }
                    }
                }
                Node::Item(i) => {
                    let i = i as usize;
                    if item_dead[i] {
                        continue;
                    }
                    item_dead[i] = true;
                    for &ei in &item_edges[i] {
                        let ei = ei as usize;
                        if !edge_alive[ei] {
                            continue;
                        }
                        edge_alive[ei] = false;
                        let u = self.interactions[ei].user as usize;
                        user_deg[u] -= 1;
                        if user_deg[u] < k && !user_dead[u] {
                            queue.push_back(Node::User(u as u32));
                        }
                    }
                }
            }
        }

        self.subset(
            self.interactions
                .iter()
                .enumerate()
                .filter(|(ei, _)| edge_alive[*ei])
                .map(|(ei, _)| ei),
        )
    }

    /// Rebuilds a dataset from a subset of interaction positions,
    /// re-densifying indices in first-seen order. External keys and the
    /// lexicon carry over.
    pub fn subset<I: IntoIterator<Item = usize>>(&self, positions: I) -> Dataset {
        let mut users = IdIndex::default();
        let mut items = IdIndex::default();
        let mut interactions = Vec::new();
        for pos in positions {
            let it = &self.interactions[pos];
            let user = users.intern(self.users.key(it.user));
            let item = items.intern(self.items.key(it.item));
            interactions.push(Interaction {
                user,
                item,
                rating: it.rating,
                review: it.review.clone(),
            });
        }
        Dataset {
            interactions,
            users,
            items,
            rating_scale: self.rating_scale,
            lexicon: Arc::clone(&self.lexicon),
        }
    }

    /// Content hash over keys, ratings, and review text; stable across
    /// processes and independent of lexicon id assignment.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.rating_scale.min.to_le_bytes());
        h.update(self.rating_scale.max.to_le_bytes());
        for it in &self.interactions {
            h.update(self.users.key(it.user).as_bytes());
            h.update([0]);
            h.update(self.items.key(it.item).as_bytes());
            h.update([0]);
            h.update(it.rating.to_le_bytes());
            for &t in &it.review {
                h.update(self.lexicon.get(t).as_bytes());
                h.update([1]);
            }
            h.update([0]);
        }
        let digest = h.finalize();
        digest[..16].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Review token ids rendered back to strings.
    pub fn review_text(&self, interaction: &Interaction) -> Vec<&str> {
        interaction
            .review
            .iter()
            .map(|&t| self.lexicon.get(t))
            .collect()
    }

    /// Multiset of externally-keyed interactions, sorted; used to
    /// compare datasets whose dense indices (or lexicons) differ.
    pub fn keyed_multiset(&self) -> Vec<(String, String, u64, Vec<String>)> {
        let mut out: Vec<_> = self
            .interactions
            .iter()
            .map(|it| {
                (
                    self.users.key(it.user).to_string(),
                    self.items.key(it.item).to_string(),
                    it.rating.to_bits(),
                    it.review
                        .iter()
                        .map(|&t| self.lexicon.get(t).to_string())
                        .collect(),
                )
            })
            .collect();
        out.sort();
        out
    }
}

/// Assembles a [`Dataset`] record by record; the programmatic
/// counterpart of [`load_interactions`] for synthetic corpora and
/// tests.
#[derive(Default)]
pub struct DatasetBuilder {
    interactions: Vec<Interaction>,
    users: IdIndex,
    items: IdIndex,
    lexicon: Lexicon,
    rating_scale: Option<RatingScale>,
}

impl DatasetBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rating_scale(mut self, scale: RatingScale) -> Self {
        self.rating_scale = Some(scale);
        self
    }

    pub fn push(&mut self, user: &str, item: &str, rating: f64, review_tokens: &[&str]) {
        let review = review_tokens
            .iter()
            .map(|tok| self.lexicon.intern(tok))
            .collect();
        let user = self.users.intern(user);
        let item = self.items.intern(item);
        self.interactions.push(Interaction {
            user,
            item,
            rating,
            review,
        });
    }

    pub fn build(self) -> Dataset {
        Dataset {
            interactions: self.interactions,
            users: self.users,
            items: self.items,
            rating_scale: self.rating_scale.unwrap_or_default(),
            lexicon: Arc::new(self.lexicon),
        }
    }
}
