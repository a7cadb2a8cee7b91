//! Fuzzy resolution of generated titles back to candidate item ids.
//!
//! Generated lines are normalized (lowercase, leading enumeration markers
//! and articles stripped, trailing year dropped, punctuation collapsed) and
//! matched against candidate titles by normalized Levenshtein similarity.

use std::sync::OnceLock;

use regex::Regex;

use crate::data::{Catalog, ItemId};
use crate::hybrid::CandidateSet;

/// Similarity threshold below which a line matches nothing.
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.8;

fn enumeration_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:\d+\s*[.):\-]\s*|[-*•]\s*)+").unwrap())
}

fn year_suffix_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\s*\(\d{4}\)\s*$").unwrap())
}

fn leading_article_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?:the|a|an)\s+").unwrap())
}

/// Drops a leading "1.", "2)", "-" style marker from a generated line.
pub fn strip_enumeration(line: &str) -> &str {
    match enumeration_re().find(line) {
        Some(m) => &line[m.end()..],
        None => line,
    }
}

/// Canonical form used for comparison: lowercased, year suffix and leading
/// article removed, punctuation mapped to spaces, whitespace collapsed.
pub fn normalize_title(s: &str) -> String {
    let lower = s.to_lowercase();
    let no_year = year_suffix_re().replace(&lower, "");
    let no_article = leading_article_re().replace(no_year.trim(), "");
    no_article
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Character-level Levenshtein distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            curr[j + 1] = sub.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// `1 - distance / max_len` over already-normalized strings; 1 for two
/// empty strings.
pub fn similarity(a: &str, b: &str) -> f64 {
    let max_len = a.chars().count().max(b.chars().count());
    if max_len == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / max_len as f64
}

/// Resolves free-text re-rank output to an ordered list of candidate item
/// ids.
///
/// Lines keep their output order; each line claims its best-matching,
/// not-yet-claimed candidate when the normalized similarity reaches the
/// threshold. Unmatched lines drop out; an empty result just means the
/// generation was noise.
pub fn parse_and_match(
    raw: &str,
    candidates: &CandidateSet,
    catalog: &Catalog,
    threshold: f64,
) -> Vec<ItemId> {
    let normalized_titles: Vec<String> = candidates
        .ranked_items
        .iter()
        .map(|id| {
            catalog
                .get(id)
                .map(|m| normalize_title(&m.title))
                .unwrap_or_default()
        })
        .collect();

    let mut claimed = vec![false; candidates.ranked_items.len()];
    let mut matched = Vec::new();
    for line in raw.lines() {
        let cleaned = normalize_title(strip_enumeration(line));
        if cleaned.is_empty() {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for (idx, title) in normalized_titles.iter().enumerate() {
            if claimed[idx] {
                continue;
            }
            let sim = similarity(&cleaned, title);
            if best.is_none_or(|(b, _)| sim > b) {
                best = Some((sim, idx));
            }
        }
        if let Some((sim, idx)) = best {
            if sim >= threshold {
                claimed[idx] = true;
                matched.push(candidates.ranked_items[idx].clone());
            }
        }
    }
    matched
}
