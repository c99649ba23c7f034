//! Independent reference implementations kept as test oracles.
//!
//! These deliberately use the slowest, most literal formulation of each
//! computation and share no code with the production paths they are
//! used to check.

use crate::corpus::Dataset;

/// k-core by repeated full scans: delete every node of degree < k,
/// rebuild, repeat until nothing changes.
pub fn k_core_bruteforce(data: &Dataset, k: u32) -> Dataset {
    let mut current = data.clone();
    loop {
        if current.is_empty() {
            return current;
        }
        let mut user_deg = vec![0u32; current.n_users()];
        let mut item_deg = vec![0u32; current.n_items()];
        for it in &current.interactions {
            user_deg[it.user as usize] += 1;
            item_deg[it.item as usize] += 1;
        }
        let keep: Vec<usize> = current
            .interactions
            .iter()
            .enumerate()
            .filter(|(_, it)| user_deg[it.user as usize] >= k && item_deg[it.item as usize] >= k)
            .map(|(pos, _)| pos)
            .collect();
        if keep.len() == current.len() {
            return current;
        }
        current = current.subset(keep);
    }
}

/// Literal restatement of the tokenization rule: lowercase the text,
/// split on whitespace, trim ASCII punctuation off both ends, drop
/// empties.
pub fn tokenize_reference(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    for piece in lower.split_whitespace() {
        let mut chars: Vec<char> = piece.chars().collect();
        while let Some(&c) = chars.first() {
            if c.is_ascii_punctuation() {
                chars.remove(0);
            } else {
                break;
            }
        }
        while let Some(&c) = chars.last() {
            if c.is_ascii_punctuation() {
                chars.pop();
            } else {
                break;
            }
        }
        if !chars.is_empty() {
            out.push(chars.into_iter().collect());
        }
    }
    out
}

/// Two-pass mean squared error: accumulate differences first, square
/// and average second.
pub fn mse_reference(preds: &[f64], truths: &[f64]) -> f64 {
    assert_eq!(preds.len(), truths.len());
    assert!(!preds.is_empty());
    let diffs: Vec<f64> = preds.iter().zip(truths).map(|(p, t)| p - t).collect();
    let mut total = 0.0f64;
    for d in &diffs {
        total += d * d;
    }
    total / diffs.len() as f64
}
