use std::sync::Arc;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, Dataset, Interaction};
use crate::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Validation,
    Test,
}

/// Seeded 80:10:10 partition of a dataset, stored as index lists into a
/// shared [`Dataset`]. The three lists are pairwise disjoint and cover
/// every interaction.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    data: Arc<Dataset>,
    train: Vec<u32>,
    validation: Vec<u32>,
    test: Vec<u32>,
    seed: u64,
}

/// Borrowed view of one partition.
#[derive(Clone, Copy)]
pub struct PartView<'a> {
    data: &'a Dataset,
    indices: &'a [u32],
}

impl<'a> PartView<'a> {
    /// View over an arbitrary index list; the split accessors cover the
    /// common case.
    pub fn new(data: &'a Dataset, indices: &'a [u32]) -> Self {
        Self { data, indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }

    pub fn indices(&self) -> &'a [u32] {
        self.indices
    }

    pub fn get(&self, pos: usize) -> &'a Interaction {
        &self.data.interactions[self.indices[pos] as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a Interaction> + '_ {
        self.indices
            .iter()
            .map(move |&i| &self.data.interactions[i as usize])
    }
}

impl SplitDataset {
    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn data_arc(&self) -> &Arc<Dataset> {
        &self.data
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn part(&self, part: Part) -> PartView<'_> {
        let indices = match part {
            Part::Train => &self.train,
            Part::Validation => &self.validation,
            Part::Test => &self.test,
        };
        PartView {
            data: &self.data,
            indices,
        }
    }

    pub fn train(&self) -> PartView<'_> {
        self.part(Part::Train)
    }

    pub fn validation(&self) -> PartView<'_> {
        self.part(Part::Validation)
    }

    pub fn test(&self) -> PartView<'_> {
        self.part(Part::Test)
    }

    pub(crate) fn from_parts(
        data: Arc<Dataset>,
        train: Vec<u32>,
        validation: Vec<u32>,
        test: Vec<u32>,
        seed: u64,
    ) -> Self {
        Self {
            data,
            train,
            validation,
            test,
            seed,
        }
    }

    /// Membership flags for training users and items (entities absent
    /// from the training partition need the models' fallback path).
    pub fn seen_in_train(&self) -> (Vec<bool>, Vec<bool>) {
        let mut users = vec![false; self.data.n_users()];
        let mut items = vec![false; self.data.n_items()];
        for it in self.train().iter() {
            users[it.user as usize] = true;
            items[it.item as usize] = true;
        }
        (users, items)
    }

    /// Returns a copy in which exactly `round(pct% · |train|)` training
    /// reviews, chosen by seeded uniform sampling, become empty token
    /// sequences. Ratings and split membership are untouched;
    /// validation/test reviews are never used at training time, so only
    /// training reviews are masked.
    pub fn mask_reviews(&self, pct: f64, seed: u64) -> SplitDataset {
        assert!(
            (0.0..=100.0).contains(&pct),
            "mask percentage must lie in 0..=100, got {pct}"
        );
        let n_mask = (pct / 100.0 * self.train.len() as f64).round() as usize;
        if n_mask == 0 {
            return self.clone();
        }
        let mut order = self.train.clone();
        let mut rng: ChaCha8Rng = stream(seed, "mask-reviews");
        order.shuffle(&mut rng);
        let mut data = (*self.data).clone();
        for &idx in order.iter().take(n_mask) {
            data.interactions[idx as usize].review.clear();
        }
        SplitDataset {
            data: Arc::new(data),
            train: self.train.clone(),
            validation: self.validation.clone(),
            test: self.test.clone(),
            seed: self.seed,
        }
    }
}

/// Seeded uniform shuffle followed by a contiguous 80:10:10 cut into
/// train/validation/test. The same seed always returns the same split.
pub fn split(data: Arc<Dataset>, seed: u64) -> Result<SplitDataset, CorpusError> {
    let n = data.len();
    if n < 10 {
        return Err(CorpusError::TooSmall { len: n, min: 10 });
    }
    let mut order: Vec<u32> = (0..n as u32).collect();
    let mut rng: ChaCha8Rng = stream(seed, "split");
    order.shuffle(&mut rng);
    let n_val = (n as f64 * 0.10).round() as usize;
    let n_test = (n as f64 * 0.10).round() as usize;
    let n_train = n - n_val - n_test;
    let validation = order[n_train..n_train + n_val].to_vec();
    let test = order[n_train + n_val..].to_vec();
    let train = {
        let mut t = order;
        t.truncate(n_train);
        t
    };
    Ok(SplitDataset {
        data,
        train,
        validation,
        test,
        seed,
    })
}
