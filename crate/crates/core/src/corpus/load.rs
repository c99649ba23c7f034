use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use serde_json::Value;

use super::{CorpusError, Dataset, IdIndex, Interaction, Lexicon, RatingScale};
use crate::text::tokenize;

/// Names of the user/item/rating/review fields in a newline-delimited
/// JSON file. Defaults match the Amazon review dumps; other layouts
/// (e.g. BeerAdvocate) are handled by remapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldMap {
    pub user: String,
    pub item: String,
    pub rating: String,
    pub review: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        Self {
            user: "reviewerID".into(),
            item: "asin".into(),
            rating: "overall".into(),
            review: "reviewText".into(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub field_map: FieldMap,
    pub rating_scale: RatingScale,
}

/// Per-record accounting from one load.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub loaded: usize,
    /// Records missing one of the mapped fields.
    pub skipped_missing_field: usize,
    /// Records whose rating fell outside the declared scale.
    pub rejected_rating: usize,
    /// Lines that were not valid JSON objects.
    pub malformed: usize,
}

fn value_as_key(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn value_as_rating(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Loads a newline-delimited JSON review file.
///
/// Every well-formed record becomes one [`Interaction`]; external ids
/// are mapped to dense indices in first-seen order. Records with an
/// empty review string load as empty token sequences; the masking
/// experiment produces such records, so they are legal. Records
/// missing a mapped field are skipped and counted.
pub fn load_interactions(
    path: &Path,
    opts: &LoadOptions,
) -> Result<(Dataset, LoadReport), CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);

    let mut lexicon = Lexicon::new();
    let mut users = IdIndex::default();
    let mut items = IdIndex::default();
    let mut interactions = Vec::new();
    let mut report = LoadReport::default();
    let fm = &opts.field_map;

    for line in reader.lines() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Value = match serde_json::from_str(&line) {
            Ok(Value::Object(map)) => Value::Object(map),
            _ => {
                report.malformed += 1;
                continue;
            }
        };
        let (user_key, item_key, rating, review_text) = match (
            record.get(&fm.user).and_then(value_as_key),
            record.get(&fm.item).and_then(value_as_key),
            record.get(&fm.rating).and_then(value_as_rating),
            record.get(&fm.review).and_then(Value::as_str),
        ) {
            (Some(u), Some(i), Some(r), Some(t)) => (u, i, r, t.to_string()),
            _ => {
                report.skipped_missing_field += 1;
                continue;
            }
        };
        if !opts.rating_scale.contains(rating) {
            report.rejected_rating += 1;
            continue;
        }
        let review = tokenize(&review_text)
            .iter()
            .map(|tok| lexicon.intern(tok))
            .collect();
        interactions.push(Interaction {
            user: users.intern(&user_key),
            item: items.intern(&item_key),
            rating,
            review,
        });
        report.loaded += 1;
    }

    Ok((
        Dataset {
            interactions,
            users,
            items,
            rating_scale: opts.rating_scale,
            lexicon: Arc::new(lexicon),
        },
        report,
    ))
}
