//! Stage-2 re-ranking: prompting, pluggable chat backends, fuzzy parsing,
//! and the evaluation gate/fallback policy.
//!
//! Re-ranking is closed-world by construction: whatever the backend emits,
//! the outcome is assembled from stage-1 candidate ids only, so hallucinated
//! items can never surface.

mod client;
mod http;
mod matching;
mod prompt;

pub use client::{
    AdversarialClient, ChatClient, EvalContext, IdentityClient, OracleClient, RecordingClient,
    RequestBudget, RetryPolicy, TranscriptClient, chat_complete, request_hash,
};
pub use http::{DEFAULT_API_KEY_ENV, HttpChatClient, HttpClientConfig};
pub use matching::{
    DEFAULT_MATCH_THRESHOLD, levenshtein, normalize_title, parse_and_match, similarity,
    strip_enumeration,
};
pub use prompt::{
    ChatMessagePair, DomainProfile, PromptSpec, build_prompt, build_prompt_spec,
    extract_candidate_lines, render_prompt,
};

use serde::{Deserialize, Serialize};

use crate::data::{Catalog, ItemId, UserId, UserSequence};
use crate::hybrid::CandidateSet;

/// How a user's final ranking came to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RerankSource {
    /// The parsed generation contained the ground truth and was applied.
    Reranked,
    /// The generation was noisy or the call failed; stage-1 order stands.
    Stage1Fallback,
    /// Ground truth was outside the candidate pool, so re-ranking could not
    /// move it and was skipped.
    Skipped,
}

/// Final per-user outcome of the re-rank stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankOutcome {
    pub user_id: UserId,
    pub source: RerankSource,
    pub ranked_items: Vec<ItemId>,
    pub raw_response: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RerankConfig {
    /// Fuzzy-match acceptance threshold in (0, 1].
    pub threshold: f64,
    pub retry: RetryPolicy,
    pub profile: DomainProfile,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            threshold: DEFAULT_MATCH_THRESHOLD,
            retry: RetryPolicy::default(),
            profile: DomainProfile::default(),
        }
    }
}

/// Applies the evaluation-time re-rank policy for one user.
///
/// This consumes the user's ground-truth target and therefore belongs to the
/// evaluation protocol only — it gates which users are worth a model call
/// and measures the result. It must never sit on a serving path.
///
/// Gate: if the target is outside the stage-1 pool, re-ranking cannot change
/// any top-N metric, so the user is skipped. Otherwise the backend is
/// prompted; if the parsed response still contains the target, the parsed
/// order (plus unparsed stage-1 leftovers, in stage-1 order) becomes the
/// ranking, and anything else falls back to stage 1.
pub fn apply_rerank_policy(
    user: &UserSequence,
    stage1: &CandidateSet,
    catalog: &Catalog,
    chat: &dyn ChatClient,
    budget: &RequestBudget,
    cfg: &RerankConfig,
) -> RerankOutcome {
    let fallback = |source: RerankSource, raw: Option<String>, error: Option<String>| {
        RerankOutcome {
            user_id: user.user_id.clone(),
            source,
            ranked_items: stage1.ranked_items.clone(),
            raw_response: raw,
            error,
        }
    };

    if !stage1.ranked_items.contains(&user.target) {
        return fallback(RerankSource::Skipped, None, None);
    }

    let messages = match build_prompt(user, stage1, catalog, &cfg.profile) {
        Ok(m) => m,
        Err(e) => return fallback(RerankSource::Stage1Fallback, None, Some(e.to_string())),
    };
    let gt_title = catalog.get(&user.target).map(|m| m.title.clone());
    let ctx = EvalContext {
        user_id: &user.user_id,
        ground_truth_title: gt_title.as_deref(),
    };
    let raw = match chat_complete(chat, &messages, &ctx, &cfg.retry, budget) {
        Ok(raw) => raw,
        Err(e) => return fallback(RerankSource::Stage1Fallback, None, Some(e.to_string())),
    };

    let parsed = parse_and_match(&raw, stage1, catalog, cfg.threshold);
    if !parsed.contains(&user.target) {
        return fallback(RerankSource::Stage1Fallback, Some(raw), None);
    }
    // Parsed prefix, then stage-1 leftovers in their original relative
    // order: always a full permutation of the candidate pool.
    let mut ranked_items = parsed;
    for id in &stage1.ranked_items {
        if !ranked_items.contains(id) {
            ranked_items.push(id.clone());
        }
    }
    RerankOutcome {
        user_id: user.user_id.clone(),
        source: RerankSource::Reranked,
        ranked_items,
        raw_response: Some(raw),
        error: None,
    }
}

/// Applies the policy to aligned (user, candidates) pairs, at most
/// `parallelism` chat calls in flight, returning outcomes ordered by
/// user id regardless of completion order.
pub fn rerank_batch(
    pairs: &[(&UserSequence, &CandidateSet)],
    catalog: &Catalog,
    chat: &dyn ChatClient,
    budget: &RequestBudget,
    cfg: &RerankConfig,
    parallelism: usize,
) -> Vec<RerankOutcome> {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[a].0.user_id.cmp(&pairs[b].0.user_id));

    let run = |i: usize| {
        let (user, stage1) = pairs[i];
        apply_rerank_policy(user, stage1, catalog, chat, budget, cfg)
    };

    if parallelism <= 1 {
        return order.iter().map(|&i| run(i)).collect();
    }
    let mut outcomes: Vec<Option<RerankOutcome>> = (0..order.len()).map(|_| None).collect();
    for chunk in order.chunks(parallelism) {
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&i| scope.spawn(move || (i, run(i))))
                .collect();
            for handle in handles {
                let (i, outcome) = handle.join().expect("rerank worker panicked");
                let slot = order.iter().position(|&o| o == i).unwrap();
                outcomes[slot] = Some(outcome);
            }
        });
    }
    outcomes
        .into_iter()
        .map(|o| o.expect("every pair produced an outcome"))
        .collect()
}
