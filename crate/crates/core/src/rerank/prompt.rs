//! Chat prompt construction for candidate re-ranking.
//!
//! The system message sets the assistant's role; the user message lays out
//! the browsing history, a numbered candidate pool, and the re-rank
//! instruction, ending with the constraint that forbids items from outside
//! the pool. Rendering is byte-deterministic.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::data::{Catalog, UserSequence};
use crate::error::Result;
use crate::hybrid::CandidateSet;
use crate::text_retriever::{RenderConfig, render_item_text};

/// Domain flavoring for prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainProfile {
    pub role: String,
    pub role_description: String,
    /// Plural noun used in the instruction block ("items", "movies", ...).
    pub item_noun: String,
    /// How history entries are rendered.
    pub render: RenderConfig,
}

impl Default for DomainProfile {
    fn default() -> Self {
        DomainProfile {
            role: "shopping assistant".to_string(),
            role_description: "recommending products for customers".to_string(),
            item_noun: "items".to_string(),
            render: RenderConfig::default(),
        }
    }
}

/// Structured prompt pieces; candidate lines are numbered 1..N in candidate
/// order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSpec {
    pub role: String,
    pub role_description: String,
    pub history_lines: Vec<String>,
    pub candidate_lines: Vec<String>,
    pub task_instruction: String,
}

/// One system + one user message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessagePair {
    pub system: String,
    pub user: String,
}

const CANDIDATE_POOL_MARKER: &str = "There is also candidate pool:";

/// Assembles the structured prompt for one user.
pub fn build_prompt_spec(
    user: &UserSequence,
    candidates: &CandidateSet,
    catalog: &Catalog,
    profile: &DomainProfile,
) -> Result<PromptSpec> {
    if candidates.ranked_items.is_empty() {
        return Err(crate::error::Error::InvalidInput(
            "cannot build a prompt over an empty candidate set".to_string(),
        ));
    }
    let start = match profile.render.last_n {
        Some(n) => user.history.len().saturating_sub(n),
        None => 0,
    };
    let history_lines = user.history[start..]
        .iter()
        .map(|id| Ok(render_item_text(catalog.require(id)?, &profile.render)))
        .collect::<Result<Vec<_>>>()?;
    let candidate_lines = candidates
        .ranked_items
        .iter()
        .enumerate()
        .map(|(i, id)| Ok(format!("{}. {}", i + 1, catalog.require(id)?.title)))
        .collect::<Result<Vec<_>>>()?;
    let noun = &profile.item_noun;
    let task_instruction = format!(
        "Please rank these {noun} by measuring the possibilities that I would like to \
         interact with next most, according to my browsing history. Please think step by step.\n\
         Please show me your ranking results with order numbers. Split your output with line \
         break. You MUST rank the given candidate {noun}. You can not generate {noun} that are \
         not in the given candidate list."
    );
    Ok(PromptSpec {
        role: profile.role.clone(),
        role_description: profile.role_description.clone(),
        history_lines,
        candidate_lines,
        task_instruction,
    })
}

/// Renders the structured prompt to chat messages.
pub fn render_prompt(spec: &PromptSpec) -> ChatMessagePair {
    let system = format!("You are a helpful {}, {}.", spec.role, spec.role_description);
    let mut user = String::from("I've browsed the following items in the past in order:\n");
    user.push_str(&spec.history_lines.join(";\n"));
    user.push_str(".\n");
    user.push_str(CANDIDATE_POOL_MARKER);
    user.push('\n');
    user.push_str(&spec.candidate_lines.join("\n"));
    user.push('\n');
    user.push_str(&spec.task_instruction);
    ChatMessagePair { system, user }
}

/// One-call prompt construction.
pub fn build_prompt(
    user: &UserSequence,
    candidates: &CandidateSet,
    catalog: &Catalog,
    profile: &DomainProfile,
) -> Result<ChatMessagePair> {
    Ok(render_prompt(&build_prompt_spec(
        user, candidates, catalog, profile,
    )?))
}

fn numbered_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^(\d+)\.\s(.*)$").unwrap())
}

/// Recovers the numbered candidate titles from a rendered user message, in
/// listed order. Mock clients use this to "read" the pool the way a real
/// model would.
pub fn extract_candidate_lines(user_message: &str) -> Vec<String> {
    let Some(pool_at) = user_message.find(CANDIDATE_POOL_MARKER) else {
        return Vec::new();
    };
    let tail = &user_message[pool_at + CANDIDATE_POOL_MARKER.len()..];
    numbered_line_re()
        .captures_iter(tail)
        .map(|c| c[2].to_string())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ItemId, ItemMeta, UserId};

    fn fixture() -> (Catalog, UserSequence, CandidateSet) {
        let catalog = Catalog::new(vec![
            ItemMeta {
                item_id: ItemId::new("m1"),
                title: "The Shawshank Redemption".to_string(),
                attributes: vec!["Thriller".to_string()],
            },
            ItemMeta {
                item_id: ItemId::new("m2"),
                title: "The Green Mile (1999)".to_string(),
                attributes: vec!["Drama".to_string()],
            },
            ItemMeta {
                item_id: ItemId::new("m3"),
                title: "Pulp Fiction (1994)".to_string(),
                attributes: vec!["Crime".to_string()],
            },
            ItemMeta {
                item_id: ItemId::new("m4"),
                title: "Seven (1995)".to_string(),
                attributes: vec!["Thriller".to_string()],
            },
        ])
        .unwrap();
        let user = UserSequence {
            user_id: UserId::new("u1"),
            history: vec![ItemId::new("m1")],
            target: ItemId::new("m2"),
        };
        let candidates = CandidateSet {
            user_id: UserId::new("u1"),
            ranked_items: vec![ItemId::new("m2"), ItemId::new("m3"), ItemId::new("m4")],
            scores: vec![0.5, 0.3, 0.2],
            truncated: true,
        };
        (catalog, user, candidates)
    }

    fn movie_profile() -> DomainProfile {
        DomainProfile {
            role: "movie fan and movie reviewer".to_string(),
            role_description: "people might ask you to recommend movies".to_string(),
            item_noun: "movies".to_string(),
            render: RenderConfig {
                noun_phrase: "a movie about".to_string(),
                ..RenderConfig::default()
            },
        }
    }

    #[test]
    fn prompt_contains_numbered_candidate_titles() {
        let (catalog, user, candidates) = fixture();
        let pair = build_prompt(&user, &candidates, &catalog, &movie_profile()).unwrap();
        assert!(pair.user.contains("1. The Green Mile (1999)"));
        assert!(pair.user.contains("2. Pulp Fiction (1994)"));
        assert!(pair.user.contains("3. Seven (1995)"));
        assert!(pair.user.contains("I've browsed the following items in the past in order:"));
        assert!(pair.user.contains("The Shawshank Redemption, a movie about Thriller"));
        assert!(pair.user.contains("You MUST rank the given candidate movies."));
        assert!(pair.system.starts_with("You are a helpful movie fan"));
    }

    #[test]
    fn single_candidate_renders_one_line() {
        let (catalog, user, mut candidates) = fixture();
        candidates.ranked_items.truncate(1);
        candidates.scores.truncate(1);
        let spec = build_prompt_spec(&user, &candidates, &catalog, &DomainProfile::default())
            .unwrap();
        assert_eq!(spec.candidate_lines, vec!["1. The Green Mile (1999)"]);
    }

    #[test]
    fn extraction_recovers_the_candidate_list_exactly() {
        let (catalog, user, candidates) = fixture();
        let pair = build_prompt(&user, &candidates, &catalog, &DomainProfile::default()).unwrap();
        let extracted = extract_candidate_lines(&pair.user);
        let expected: Vec<String> = candidates
            .ranked_items
            .iter()
            .map(|id| catalog.get(id).unwrap().title.clone())
            .collect();
        assert_eq!(extracted, expected);
    }

    #[test]
    fn rendering_is_byte_deterministic() {
        let (catalog, user, candidates) = fixture();
        let a = build_prompt(&user, &candidates, &catalog, &movie_profile()).unwrap();
        let b = build_prompt(&user, &candidates, &catalog, &movie_profile()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_candidates_are_rejected() {
        let (catalog, user, mut candidates) = fixture();
        candidates.ranked_items.clear();
        candidates.scores.clear();
        assert!(build_prompt(&user, &candidates, &catalog, &DomainProfile::default()).is_err());
    }
}
