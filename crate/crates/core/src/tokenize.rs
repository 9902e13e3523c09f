//! The one tokenizer shared by indexing, keyword queries and term counts.

use std::collections::BTreeSet;

/// Lowercases `text` and splits it on every character that is not a letter
/// or digit. Empty tokens are dropped; no stemming.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Distinct tokens of `text`, sorted.
pub fn token_set(text: &str) -> BTreeSet<String> {
    tokens(text).collect()
}

/// Normalizes a user-supplied keyword to the token form, or `None` when it
/// does not consist of exactly one token.
pub fn normalize_keyword(keyword: &str) -> Option<String> {
    let mut it = tokens(keyword);
    let first = it.next()?;
    it.next().is_none().then_some(first)
}
