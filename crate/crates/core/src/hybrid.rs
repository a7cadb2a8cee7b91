//! Score fusion and top-N candidate retrieval.
//!
//! Stage-1 output: softmax-normalize the ID and text score vectors, mix them
//! as `lambda * p_id + (1 - lambda) * p_text`, and keep the top-N items.
//! Ties break by ascending item id, which coincides with catalog index
//! order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Catalog, ItemId, UserId};
use crate::error::{Error, Result};

/// Default candidate pool size fed to the re-ranker.
pub const DEFAULT_N_CANDIDATES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridConfig {
    /// Weight on the ID retriever; 1 - lambda goes to the text retriever.
    pub lambda: f64,
    pub n_candidates: usize,
    /// Exclude history items from the candidate pool before selection.
    pub mask_history: bool,
}

impl Default for HybridConfig {
    fn default() -> Self {
        HybridConfig {
            lambda: 0.5,
            n_candidates: DEFAULT_N_CANDIDATES,
            mask_history: false,
        }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) || !self.lambda.is_finite() {
            return Err(Error::InvalidInput(format!(
                "lambda {} must lie in [0, 1]",
                self.lambda
            )));
        }
        if self.n_candidates == 0 {
            return Err(Error::InvalidInput(
                "n_candidates must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Ranked candidates for one user, highest hybrid probability first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub user_id: UserId,
    #[serde(rename = "items")]
    pub ranked_items: Vec<ItemId>,
    pub scores: Vec<f64>,
    /// True when lower-scored items were cut to honor `n_candidates`.
    #[serde(default)]
    pub truncated: bool,
}

/// Max-shifted softmax; strictly positive, sums to 1 within 1e-9.
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("softmax of an empty vector".to_string()));
    }
    if let Some(&bad) = scores.iter().find(|x| !x.is_finite()) {
        return Err(Error::Domain(format!(
            "softmax requires finite inputs, found {bad}"
        )));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    Ok(exp.into_iter().map(|e| e / sum).collect())
}

/// Convex mixture of two probability vectors. At the endpoints the
/// corresponding input comes back exactly.
pub fn mix_probs(p_id: &[f64], p_text: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if p_id.len() != p_text.len() {
        return Err(Error::Shape(format!(
            "id vector has {} entries, text vector {}",
            p_id.len(),
            p_text.len()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!(
            "lambda {lambda} must lie in [0, 1]"
        )));
    }
    if lambda == 1.0 {
        return Ok(p_id.to_vec());
    }
    if lambda == 0.0 {
        return Ok(p_text.to_vec());
    }
    Ok(p_id
        .iter()
        .zip(p_text)
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect())
}

/// Convex mixture of the two softmax-normalized score vectors. At the
/// endpoints the result equals the corresponding softmax exactly.
pub fn hybrid_scores(id_logits: &[f64], text_logits: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if id_logits.len() != text_logits.len() {
        return Err(Error::Shape(format!(
            "id vector has {} entries, text vector {}",
            id_logits.len(),
            text_logits.len()
        )));
    }
    mix_probs(&softmax(id_logits)?, &softmax(text_logits)?, lambda)
}

/// Indices of `scores` in ranking order: descending score, ties by
/// ascending index (= ascending item id for catalog-ordered vectors).
pub fn rank_indices(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| a.cmp(&b))
    });
    order
}

/// 1-based rank of index `target` under the same total order as
/// [`rank_indices`], without materializing the sort.
pub fn rank_of_index(scores: &[f64], target: usize) -> usize {
    let s = scores[target];
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(i, &x)| x.total_cmp(&s).is_gt() || (x.total_cmp(&s).is_eq() && i < target))
        .count();
    ahead + 1
}

/// Takes the top `n_candidates` items of a hybrid probability vector.
///
/// With `mask_history` on, history items leave the pool before selection.
/// Asking for more candidates than remain returns everything and is not an
/// error.
pub fn retrieve_top_n(
    user_id: &UserId,
    hybrid: &[f64],
    cfg: &HybridConfig,
    history: &[ItemId],
    catalog: &Catalog,
) -> Result<CandidateSet> {
    cfg.validate()?;
    if hybrid.len() != catalog.len() {
        return Err(Error::Shape(format!(
            "score vector has {} entries for a catalog of {}",
            hybrid.len(),
            catalog.len()
        )));
    }
    let mut masked: Vec<bool> = vec![false; hybrid.len()];
    if cfg.mask_history {
        for id in history {
            if let Some(i) = catalog.index_of(id) {
                masked[i] = true;
            }
        }
    }
    let order = rank_indices(hybrid);
    let mut ranked_items = Vec::new();
    let mut scores = Vec::new();
    let mut skipped_any = false;
    for i in order {
        if masked[i] {
            continue;
        }
        if ranked_items.len() == cfg.n_candidates {
            skipped_any = true;
            break;
        }
        ranked_items.push(catalog.id_at(i).clone());
        scores.push(hybrid[i]);
    }
    Ok(CandidateSet {
        user_id: user_id.clone(),
        ranked_items,
        scores,
        truncated: skipped_any,
    })
}

/// Writes candidate sets as JSON lines: `{user_id, items, scores, truncated}`.
pub fn write_candidates_jsonl(path: &Path, sets: &[CandidateSet]) -> Result<()> {
    let display = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut out = BufWriter::new(file);
    for set in sets {
        serde_json::to_writer(&mut out, set)?;
        out.write_all(b"\n").map_err(|e| Error::io(&display, e))?;
    }
    Ok(())
}

pub fn read_candidates_jsonl(path: &Path) -> Result<Vec<CandidateSet>> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&display, e))?;
    let mut sets = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&display, e))?;
        if line.trim().is_empty() {
            continue;
        }
        sets.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: display.clone(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(sets)
}
