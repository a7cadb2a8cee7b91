//! Ranking metrics over a single held-out target.

use serde::{Deserialize, Serialize};

use crate::data::ItemId;

/// 1-based rank of `target` in `ranked`, if present.
pub fn rank_of(ranked: &[ItemId], target: &ItemId) -> Option<usize> {
    ranked.iter().position(|i| i == target).map(|p| p + 1)
}

/// 1 if the target appears in the first `k` positions, else 0.
pub fn recall_at_k(ranked: &[ItemId], target: &ItemId, k: usize) -> f64 {
    match rank_of(ranked, target) {
        Some(rank) if rank <= k => 1.0,
        _ => 0.0,
    }
}

/// With a single relevant item the ideal DCG is 1, so NDCG@k reduces to
/// `1 / log2(rank + 1)` when the target ranks within k, else 0.
pub fn ndcg_at_k(ranked: &[ItemId], target: &ItemId, k: usize) -> f64 {
    match rank_of(ranked, target) {
        Some(rank) if rank <= k => 1.0 / ((rank as f64) + 1.0).log2(),
        _ => 0.0,
    }
}

/// Which users a report averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convention {
    /// Every test user counts; failed re-rank generations fall back to the
    /// stage-1 ranking.
    FallbackInclusive,
    /// Users whose re-rank generation was noisy are dropped from the mean.
    PaperFiltered,
}

/// Mean Recall@K / NDCG@K for K in {5, 10} over a set of users. Metric
/// fields are None when `user_count` is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub recall_at_5: Option<f64>,
    pub ndcg_at_5: Option<f64>,
    pub recall_at_10: Option<f64>,
    pub ndcg_at_10: Option<f64>,
    pub user_count: usize,
    pub convention: Convention,
}

/// Streaming mean accumulator feeding a [`MetricReport`].
#[derive(Debug, Clone)]
pub struct MetricAccumulator {
    sums: [f64; 4],
    count: usize,
}

impl MetricAccumulator {
    pub fn new() -> Self {
        MetricAccumulator {
            sums: [0.0; 4],
            count: 0,
        }
    }

    pub fn add(&mut self, ranked: &[ItemId], target: &ItemId) {
        self.sums[0] += recall_at_k(ranked, target, 5);
        self.sums[1] += ndcg_at_k(ranked, target, 5);
        self.sums[2] += recall_at_k(ranked, target, 10);
        self.sums[3] += ndcg_at_k(ranked, target, 10);
        self.count += 1;
    }

    /// Adds a user whose ranking is already reduced to a known rank (or
    /// absence) of the target.
    pub fn add_rank(&mut self, rank: Option<usize>) {
        let hit = |k: usize| match rank {
            Some(r) if r <= k => 1.0,
            _ => 0.0,
        };
        let gain = |k: usize| match rank {
            Some(r) if r <= k => 1.0 / ((r as f64) + 1.0).log2(),
            _ => 0.0,
        };
        self.sums[0] += hit(5);
        self.sums[1] += gain(5);
        self.sums[2] += hit(10);
        self.sums[3] += gain(10);
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn report(&self, convention: Convention) -> MetricReport {
        let mean = |i: usize| {
            if self.count == 0 {
                None
            } else {
                Some(self.sums[i] / self.count as f64)
            }
        };
        MetricReport {
            recall_at_5: mean(0),
            ndcg_at_5: mean(1),
            recall_at_10: mean(2),
            ndcg_at_10: mean(3),
            user_count: self.count,
            convention,
        }
    }
}

impl Default for MetricAccumulator {
    fn default() -> Self {
        Self::new()
    }
}
