//! Test-set evaluation over a trained global model.
//!
//! Stage-1 metrics rank the ground truth against the full catalog under the
//! hybrid mixture; stage-2 metrics score the re-ranked candidate
//! permutation. Per-user softmax vectors are computed once and cached so a
//! lambda sweep never retrains or re-encodes anything.

use serde::{Deserialize, Serialize};

use crate::data::{Catalog, UserSequence};
use crate::error::{Error, Result};
use crate::federation::GlobalModel;
use crate::hybrid::{CandidateSet, HybridConfig, mix_probs, rank_of_index, retrieve_top_n, softmax};
use crate::id_retriever;
use crate::metrics::{Convention, MetricAccumulator, MetricReport, rank_of};
use crate::rerank::{
    ChatClient, RerankConfig, RerankOutcome, RerankSource, RequestBudget, rerank_batch,
};
use crate::text_retriever::{PassageIndex, RenderConfig, render_query};

/// Per-user softmax vectors for both retrievers, users sorted by id.
pub struct ScoreCache {
    pub id_probs: Vec<Vec<f64>>,
    pub text_probs: Vec<Vec<f64>>,
    /// Catalog index of each user's ground truth.
    pub target_indices: Vec<usize>,
    /// Indices into the caller's user slice, in user-id order.
    pub user_order: Vec<usize>,
}

/// Encodes and scores every test user once under both retrievers.
pub fn build_score_cache(
    model: &GlobalModel,
    test_users: &[UserSequence],
    catalog: &Catalog,
    render: &RenderConfig,
) -> Result<ScoreCache> {
    let mut user_order: Vec<usize> = (0..test_users.len()).collect();
    user_order.sort_by(|&a, &b| test_users[a].user_id.cmp(&test_users[b].user_id));

    let index = if test_users.is_empty() {
        None
    } else {
        Some(PassageIndex::build(&model.text_params, catalog, render)?)
    };

    let mut id_probs = Vec::with_capacity(test_users.len());
    let mut text_probs = Vec::with_capacity(test_users.len());
    let mut target_indices = Vec::with_capacity(test_users.len());
    for &u in &user_order {
        let user = &test_users[u];
        let id_logits = id_retriever::id_forward(&model.id_params, catalog, &user.history)?;
        let query = render_query(&user.history, catalog, render)?;
        let text_logits = index
            .as_ref()
            .expect("index exists when users exist")
            .score(query.as_str())?;
        id_probs.push(softmax(&id_logits)?);
        text_probs.push(softmax(&text_logits)?);
        target_indices.push(catalog.require_index(&user.target)?);
    }
    Ok(ScoreCache {
        id_probs,
        text_probs,
        target_indices,
        user_order,
    })
}

/// Everything needed to run stage 2 during evaluation.
pub struct RerankRuntime<'a> {
    pub client: &'a dyn ChatClient,
    pub budget: &'a RequestBudget,
    pub cfg: RerankConfig,
    pub parallelism: usize,
}

/// Stage-2 outcome tallies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct OutcomeCounts {
    pub reranked: usize,
    pub fallback: usize,
    pub skipped: usize,
}

/// Stage-2 metrics under both reporting conventions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTwoReport {
    pub inclusive: MetricReport,
    pub filtered: MetricReport,
    pub counts: OutcomeCounts,
}

/// Metrics for one pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub lambda: f64,
    pub stage1: MetricReport,
    pub stage2: Option<StageTwoReport>,
}

/// Evaluates one lambda from cached score vectors; reuses the cache across
/// sweep points and ablation variants.
pub fn evaluate_cached(
    cache: &ScoreCache,
    test_users: &[UserSequence],
    catalog: &Catalog,
    hybrid_cfg: &HybridConfig,
    rerank: Option<&RerankRuntime<'_>>,
) -> Result<PipelineReport> {
    hybrid_cfg.validate()?;
    let mut stage1_acc = MetricAccumulator::new();
    let mut candidate_sets: Vec<CandidateSet> = Vec::with_capacity(cache.user_order.len());

    for (slot, &u) in cache.user_order.iter().enumerate() {
        let user = &test_users[u];
        let mixed = mix_probs(
            &cache.id_probs[slot],
            &cache.text_probs[slot],
            hybrid_cfg.lambda,
        )?;
        // Stage-1 metrics come from the full-catalog ranking.
        stage1_acc.add_rank(Some(rank_of_index(&mixed, cache.target_indices[slot])));
        if rerank.is_some() {
            candidate_sets.push(retrieve_top_n(
                &user.user_id,
                &mixed,
                hybrid_cfg,
                &user.history,
                catalog,
            )?);
        }
    }
    let stage1 = stage1_acc.report(Convention::FallbackInclusive);

    let stage2 = match rerank {
        None => None,
        Some(runtime) => {
            let pairs: Vec<(&UserSequence, &CandidateSet)> = cache
                .user_order
                .iter()
                .zip(candidate_sets.iter())
                .map(|(&u, set)| (&test_users[u], set))
                .collect();
            let outcomes = rerank_batch(
                &pairs,
                catalog,
                runtime.client,
                runtime.budget,
                &runtime.cfg,
                runtime.parallelism,
            );
            Some(stage_two_report(&pairs, &outcomes))
        }
    };

    Ok(PipelineReport {
        lambda: hybrid_cfg.lambda,
        stage1,
        stage2,
    })
}

fn stage_two_report(
    pairs: &[(&UserSequence, &CandidateSet)],
    outcomes: &[RerankOutcome],
) -> StageTwoReport {
    let mut inclusive = MetricAccumulator::new();
    let mut filtered = MetricAccumulator::new();
    let mut counts = OutcomeCounts::default();
    for ((user, _), outcome) in pairs.iter().zip(outcomes) {
        debug_assert_eq!(&outcome.user_id, &user.user_id);
        inclusive.add(&outcome.ranked_items, &user.target);
        match outcome.source {
            RerankSource::Reranked => {
                counts.reranked += 1;
                filtered.add(&outcome.ranked_items, &user.target);
            }
            RerankSource::Stage1Fallback => {
                counts.fallback += 1;
            }
            RerankSource::Skipped => {
                counts.skipped += 1;
                filtered.add(&outcome.ranked_items, &user.target);
            }
        }
    }
    StageTwoReport {
        inclusive: inclusive.report(Convention::FallbackInclusive),
        filtered: filtered.report(Convention::PaperFiltered),
        counts,
    }
}

/// Stage-1 top-N candidate sets for every cached user at one lambda, in
/// user-id order. This is the JSONL payload handed to the standalone
/// `rerank` flow.
pub fn stage1_candidates(
    cache: &ScoreCache,
    test_users: &[UserSequence],
    catalog: &Catalog,
    hybrid_cfg: &HybridConfig,
) -> Result<Vec<CandidateSet>> {
    hybrid_cfg.validate()?;
    cache
        .user_order
        .iter()
        .enumerate()
        .map(|(slot, &u)| {
            let user = &test_users[u];
            let mixed = mix_probs(
                &cache.id_probs[slot],
                &cache.text_probs[slot],
                hybrid_cfg.lambda,
            )?;
            retrieve_top_n(&user.user_id, &mixed, hybrid_cfg, &user.history, catalog)
        })
        .collect()
}

/// Full-pipeline evaluation without an external cache.
pub fn evaluate_pipeline(
    model: &GlobalModel,
    test_users: &[UserSequence],
    catalog: &Catalog,
    hybrid_cfg: &HybridConfig,
    render: &RenderConfig,
    rerank: Option<&RerankRuntime<'_>>,
) -> Result<PipelineReport> {
    let cache = build_score_cache(model, test_users, catalog, render)?;
    evaluate_cached(&cache, test_users, catalog, hybrid_cfg, rerank)
}

/// One sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub stage1: MetricReport,
}

/// Stage-1 metrics across a lambda grid, reusing cached score vectors; no
/// retraining, no re-encoding.
pub fn sensitivity_sweep(
    cache: &ScoreCache,
    test_users: &[UserSequence],
    catalog: &Catalog,
    base: &HybridConfig,
    grid: &[f64],
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty lambda grid".to_string()));
    }
    if let Some(&bad) = grid.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::InvalidInput(format!(
            "lambda {bad} outside [0, 1] in the sweep grid"
        )));
    }
    grid.iter()
        .map(|&lambda| {
            let cfg = HybridConfig {
                lambda,
                ..base.clone()
            };
            let report = evaluate_cached(cache, test_users, catalog, &cfg, None)?;
            Ok(SweepRow {
                lambda,
                stage1: report.stage1,
            })
        })
        .collect()
}

/// One ablation variant's metric row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub recall_at_5: Option<f64>,
    pub ndcg_at_5: Option<f64>,
    pub recall_at_10: Option<f64>,
    pub ndcg_at_10: Option<f64>,
}

impl AblationRow {
    fn from_report(variant: &str, report: &MetricReport) -> Self {
        AblationRow {
            variant: variant.to_string(),
            recall_at_5: report.recall_at_5,
            ndcg_at_5: report.ndcg_at_5,
            recall_at_10: report.recall_at_10,
            ndcg_at_10: report.ndcg_at_10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Aligned plain-text table, one variant per row.
    pub fn format_text(&self) -> String {
        let mut out = String::new();
        let width = self
            .rows
            .iter()
            .map(|r| r.variant.len())
            .max()
            .unwrap_or(7)
            .max("variant".len());
        out.push_str(&format!(
            "{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}\n",
            "variant", "R@5", "N@5", "R@10", "N@10"
        ));
        let fmt = |v: Option<f64>| match v {
            Some(x) => format!("{x:.4}"),
            None => "-".to_string(),
        };
        for row in &self.rows {
            out.push_str(&format!(
                "{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}\n",
                row.variant,
                fmt(row.recall_at_5),
                fmt(row.ndcg_at_5),
                fmt(row.recall_at_10),
                fmt(row.ndcg_at_10),
            ));
        }
        out
    }
}

/// The four-variant component ablation: full pipeline, ID retriever only
/// masked out, text retriever only masked out, and re-rank masked out. All
/// variants share the trained model and score cache; "w/o rerank" is the
/// full variant's stage-1 block verbatim.
pub fn ablation(
    cache: &ScoreCache,
    test_users: &[UserSequence],
    catalog: &Catalog,
    base: &HybridConfig,
    rerank: Option<&RerankRuntime<'_>>,
) -> Result<AblationTable> {
    let stage_metrics = |report: &PipelineReport| match &report.stage2 {
        Some(two) => two.inclusive.clone(),
        None => report.stage1.clone(),
    };

    let full = evaluate_cached(cache, test_users, catalog, base, rerank)?;
    let without_id = evaluate_cached(
        cache,
        test_users,
        catalog,
        &HybridConfig {
            lambda: 0.0,
            ..base.clone()
        },
        rerank,
    )?;
    let without_text = evaluate_cached(
        cache,
        test_users,
        catalog,
        &HybridConfig {
            lambda: 1.0,
            ..base.clone()
        },
        rerank,
    )?;

    Ok(AblationTable {
        rows: vec![
            AblationRow::from_report("full", &stage_metrics(&full)),
            AblationRow::from_report("w/o id", &stage_metrics(&without_id)),
            AblationRow::from_report("w/o text", &stage_metrics(&without_text)),
            AblationRow::from_report("w/o rerank", &full.stage1),
        ],
    })
}

/// Convenience for tests: rank lookup in an outcome list.
pub fn outcome_rank(outcome: &RerankOutcome, target: &crate::data::ItemId) -> Option<usize> {
    rank_of(&outcome.ranked_items, target)
}
