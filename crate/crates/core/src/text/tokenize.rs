/// Splits review text into tokens: lowercase, split on Unicode
/// whitespace, strip leading/trailing ASCII punctuation. Stopwords are
/// kept on purpose.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    lower
        .split_whitespace()
        .filter_map(|piece| {
            let trimmed = piece.trim_matches(|c: char| c.is_ascii_punctuation());
            if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_string())
            }
        })
        .collect()
}
