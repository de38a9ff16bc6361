//! Shared text normalization used by dedupe, diversity, scoring and hashing.

/// Trims and collapses every run of whitespace to a single space.
pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Case-fold, trim and collapse internal whitespace.
pub fn fold(s: &str) -> String {
    collapse_whitespace(&s.to_lowercase())
}

/// Case-folded tokens with punctuation removed.
///
/// Punctuation is deleted rather than replaced, so `sci-fi` becomes `scifi`
/// and `don't` becomes `dont`.
pub fn tokens(s: &str) -> Vec<String> {
    let stripped: String = s
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    stripped.split_whitespace().map(str::to_owned).collect()
}

/// Case-folded, punctuation-stripped, whitespace-collapsed form of a prompt.
pub fn normalize_prompt(s: &str) -> String {
    tokens(s).join(" ")
}
