//! ID-based sequential retriever.
//!
//! A diagonal linear recurrent unit over tied item embeddings: the hidden
//! state follows `h_t = a ⊙ h_{t-1} + B·E[x_t]` with per-channel decay
//! `a = sigmoid(raw)` held inside (0, 1), and logits over the item scope are
//! `s_j = ⟨h_l, E[j]⟩`. Trained with full-softmax cross entropy on the
//! held-out next item; gradients are backpropagated through time by hand.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Catalog, ItemId, UserSequence};
use crate::error::{Error, Result};
use crate::optim::{OptimState, Optimizer};
use crate::rng;

pub const DEFAULT_ID_DIM: usize = 32;

/// Trainable parameters: item embeddings `E` (tied input/output), input map
/// `B`, and raw decay logits (decay = sigmoid(raw), elementwise in (0, 1)).
#[derive(Debug, Clone, PartialEq)]
pub struct IdRetrieverParams {
    item_embeddings: Array2<f64>,
    input_map: Array2<f64>,
    raw_decay: Array1<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl IdRetrieverParams {
    /// Uniform(-1/sqrt(d), 1/sqrt(d)) init for `E` and `B`; raw decay starts
    /// at zero so every channel decays at 0.5.
    pub fn init(n_items: usize, dim: usize, seed: u64) -> Result<Self> {
        if n_items == 0 || dim == 0 {
            return Err(Error::Config(
                "id retriever needs a nonempty catalog and a positive dimension".to_string(),
            ));
        }
        let mut stream = rng::rng_from(seed, &[]);
        let bound = 1.0 / (dim as f64).sqrt();
        let mut uniform = |n: usize| -> Vec<f64> {
            (0..n).map(|_| stream.random_range(-bound..bound)).collect()
        };
        Ok(IdRetrieverParams {
            item_embeddings: Array2::from_shape_vec((n_items, dim), uniform(n_items * dim))
                .expect("shape matches length"),
            input_map: Array2::from_shape_vec((dim, dim), uniform(dim * dim))
                .expect("shape matches length"),
            raw_decay: Array1::zeros(dim),
        })
    }

    /// Builds params from explicit matrices (used by tests and checkpoint
    /// loading). Shapes must agree.
    pub fn from_parts(
        item_embeddings: Array2<f64>,
        input_map: Array2<f64>,
        raw_decay: Array1<f64>,
    ) -> Result<Self> {
        let dim = item_embeddings.ncols();
        if input_map.nrows() != dim || input_map.ncols() != dim || raw_decay.len() != dim {
            return Err(Error::Shape(format!(
                "embeddings {:?}, input map {:?}, decay {} are inconsistent",
                item_embeddings.dim(),
                input_map.dim(),
                raw_decay.len()
            )));
        }
        Ok(IdRetrieverParams {
            item_embeddings,
            input_map,
            raw_decay,
        })
    }

    pub fn n_items(&self) -> usize {
        self.item_embeddings.nrows()
    }

    pub fn dim(&self) -> usize {
        self.item_embeddings.ncols()
    }

    /// Effective decay vector, elementwise sigmoid of the raw logits.
    pub fn decay(&self) -> Array1<f64> {
        self.raw_decay.mapv(sigmoid)
    }

    pub fn param_count(&self) -> usize {
        self.item_embeddings.len() + self.input_map.len() + self.raw_decay.len()
    }

    /// Flat view for aggregation and checkpoints: `E` row-major, then `B`
    /// row-major, then raw decay. Raw (pre-sigmoid) decay values are what
    /// gets averaged, keeping the (0, 1) constraint intact.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        flat.extend(self.item_embeddings.iter());
        flat.extend(self.input_map.iter());
        flat.extend(self.raw_decay.iter());
        flat
    }

    pub fn from_flat(n_items: usize, dim: usize, flat: &[f64]) -> Result<Self> {
        let expected = n_items * dim + dim * dim + dim;
        if flat.len() != expected {
            return Err(Error::Shape(format!(
                "flat vector has {} entries, expected {expected}",
                flat.len()
            )));
        }
        let (e, rest) = flat.split_at(n_items * dim);
        let (b, a) = rest.split_at(dim * dim);
        Self::from_parts(
            Array2::from_shape_vec((n_items, dim), e.to_vec()).expect("split sizes"),
            Array2::from_shape_vec((dim, dim), b.to_vec()).expect("split sizes"),
            Array1::from_vec(a.to_vec()),
        )
    }
}

/// Accumulated gradients, same layout as the parameters.
#[derive(Debug, Clone)]
pub struct IdGradients {
    pub item_embeddings: Array2<f64>,
    pub input_map: Array2<f64>,
    pub raw_decay: Array1<f64>,
}

impl IdGradients {
    fn zeros(params: &IdRetrieverParams) -> Self {
        IdGradients {
            item_embeddings: Array2::zeros(params.item_embeddings.dim()),
            input_map: Array2::zeros(params.input_map.dim()),
            raw_decay: Array1::zeros(params.raw_decay.len()),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        flat.extend(self.item_embeddings.iter());
        flat.extend(self.input_map.iter());
        flat.extend(self.raw_decay.iter());
        flat
    }
}

/// A sequence resolved to dense catalog indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedSequence {
    pub history: Vec<usize>,
    pub target: usize,
}

/// Resolves item ids to catalog indices once, up front.
pub fn index_sequences(catalog: &Catalog, data: &[UserSequence]) -> Result<Vec<IndexedSequence>> {
    data.iter()
        .map(|seq| {
            let history = seq
                .history
                .iter()
                .map(|id| catalog.require_index(id))
                .collect::<Result<Vec<_>>>()?;
            Ok(IndexedSequence {
                history,
                target: catalog.require_index(&seq.target)?,
            })
        })
        .collect()
}

/// Runs the recurrence and returns all hidden states `h_0..h_l`.
fn run_recurrence(params: &IdRetrieverParams, history: &[usize]) -> Vec<Array1<f64>> {
    let decay = params.decay();
    let mut states = Vec::with_capacity(history.len() + 1);
    states.push(Array1::zeros(params.dim()));
    for &item in history {
        let prev = states.last().unwrap();
        let input = params
            .input_map
            .dot(&params.item_embeddings.row(item));
        states.push(&decay * prev + input);
    }
    states
}

/// Logit vector over the item scope for one history, in catalog index order.
pub fn forward_indexed(params: &IdRetrieverParams, history: &[usize]) -> Result<Array1<f64>> {
    if history.is_empty() {
        return Err(Error::InvalidInput(
            "id retriever requires a nonempty history".to_string(),
        ));
    }
    if let Some(&bad) = history.iter().find(|&&i| i >= params.n_items()) {
        return Err(Error::Shape(format!(
            "history index {bad} out of range for {} items",
            params.n_items()
        )));
    }
    let states = run_recurrence(params, history);
    Ok(params.item_embeddings.dot(states.last().unwrap()))
}

/// Id-keyed wrapper over [`forward_indexed`].
pub fn id_forward(
    params: &IdRetrieverParams,
    catalog: &Catalog,
    history: &[ItemId],
) -> Result<Vec<f64>> {
    if catalog.len() != params.n_items() {
        return Err(Error::Shape(format!(
            "catalog has {} items but the model scores {}",
            catalog.len(),
            params.n_items()
        )));
    }
    let indices = history
        .iter()
        .map(|id| catalog.require_index(id))
        .collect::<Result<Vec<_>>>()?;
    Ok(forward_indexed(params, &indices)?.to_vec())
}

fn log_sum_exp(v: &Array1<f64>) -> f64 {
    let max = v.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    max + v.mapv(|x| (x - max).exp()).sum().ln()
}

/// Mean cross-entropy of the batch under the full-catalog softmax.
pub fn ce_loss_indexed(params: &IdRetrieverParams, batch: &[IndexedSequence]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("loss over an empty batch".to_string()));
    }
    let mut total = 0.0;
    for example in batch {
        let logits = forward_indexed(params, &example.history)?;
        total += log_sum_exp(&logits) - logits[example.target];
    }
    Ok(total / batch.len() as f64)
}

/// Id-keyed wrapper over [`ce_loss_indexed`].
pub fn id_ce_loss(
    params: &IdRetrieverParams,
    catalog: &Catalog,
    batch: &[UserSequence],
) -> Result<f64> {
    ce_loss_indexed(params, &index_sequences(catalog, batch)?)
}

/// Loss plus gradients via backpropagation through time.
pub fn ce_loss_grad_indexed(
    params: &IdRetrieverParams,
    batch: &[IndexedSequence],
) -> Result<(f64, IdGradients)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("loss over an empty batch".to_string()));
    }
    let decay = params.decay();
    let scale = 1.0 / batch.len() as f64;
    let mut grads = IdGradients::zeros(params);
    let mut total = 0.0;

    for example in batch {
        if example.history.is_empty() {
            return Err(Error::InvalidInput(
                "id retriever requires a nonempty history".to_string(),
            ));
        }
        let states = run_recurrence(params, &example.history);
        let h_last = states.last().unwrap();
        let logits = params.item_embeddings.dot(h_last);
        total += log_sum_exp(&logits) - logits[example.target];

        // d loss / d logits = softmax(logits) - one_hot(target)
        let max = logits.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let exp = logits.mapv(|x| (x - max).exp());
        let mut g_logits = &exp / exp.sum();
        g_logits[example.target] -= 1.0;
        g_logits *= scale;

        // Output side: E appears as the scoring matrix.
        for (j, &g) in g_logits.iter().enumerate() {
            if g != 0.0 {
                let mut row = grads.item_embeddings.row_mut(j);
                row.scaled_add(g, h_last);
            }
        }
        let mut g_h = params.item_embeddings.t().dot(&g_logits);

        // Backward through time; E also appears as the input embedding.
        for t in (0..example.history.len()).rev() {
            let item = example.history[t];
            let h_prev = &states[t];
            grads.raw_decay.scaled_add(1.0, &(&g_h * h_prev));
            let input_row = params.item_embeddings.row(item);
            for (r, &g) in g_h.iter().enumerate() {
                if g != 0.0 {
                    let mut row = grads.input_map.row_mut(r);
                    row.scaled_add(g, &input_row);
                }
            }
            let g_input = params.input_map.t().dot(&g_h);
            grads
                .item_embeddings
                .row_mut(item)
                .scaled_add(1.0, &g_input);
            g_h *= &decay;
        }
    }

    // Chain through decay = sigmoid(raw).
    let sig_grad = decay.mapv(|a| a * (1.0 - a));
    grads.raw_decay *= &sig_grad;

    Ok((total * scale, grads))
}

/// Local training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdTrainConfig {
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for IdTrainConfig {
    fn default() -> Self {
        IdTrainConfig {
            learning_rate: 1e-3,
            local_epochs: 80,
            batch_size: 32,
            seed: 0,
            optimizer: Optimizer::Sgd,
        }
    }
}

/// Runs `local_epochs` of seeded minibatch training and returns the updated
/// parameters. Deterministic given the config seed.
pub fn id_train_local(
    params: &IdRetrieverParams,
    catalog: &Catalog,
    client_data: &[UserSequence],
    cfg: &IdTrainConfig,
) -> Result<IdRetrieverParams> {
    if client_data.is_empty() {
        return Err(Error::InvalidInput(
            "local training requires a nonempty client dataset".to_string(),
        ));
    }
    if !cfg.learning_rate.is_finite() || cfg.learning_rate < 0.0 {
        return Err(Error::Config(format!(
            "learning rate {} must be finite and non-negative",
            cfg.learning_rate
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".to_string()));
    }

    let indexed = index_sequences(catalog, client_data)?;
    let mut trained = params.clone();
    let mut state = OptimState::new(trained.param_count(), &cfg.optimizer);
    let e_len = trained.item_embeddings.len();
    let b_len = trained.input_map.len();

    for epoch in 0..cfg.local_epochs {
        let mut order: Vec<usize> = (0..indexed.len()).collect();
        order.shuffle(&mut rng::rng_from(cfg.seed, &[epoch as u64]));
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<IndexedSequence> =
                chunk.iter().map(|&i| indexed[i].clone()).collect();
            let (loss, grads) = ce_loss_grad_indexed(&trained, &batch)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    batch: batch_idx,
                    message: format!("id cross-entropy loss is {loss}"),
                });
            }
            state.tick();
            state.apply(
                &cfg.optimizer,
                cfg.learning_rate,
                0,
                trained.item_embeddings.as_slice_mut().expect("contiguous"),
                grads.item_embeddings.as_slice().expect("contiguous"),
            );
            state.apply(
                &cfg.optimizer,
                cfg.learning_rate,
                e_len,
                trained.input_map.as_slice_mut().expect("contiguous"),
                grads.input_map.as_slice().expect("contiguous"),
            );
            state.apply(
                &cfg.optimizer,
                cfg.learning_rate,
                e_len + b_len,
                trained.raw_decay.as_slice_mut().expect("contiguous"),
                grads.raw_decay.as_slice().expect("contiguous"),
            );
        }
    }
    Ok(trained)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ItemMeta;

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    fn tiny_catalog(n: usize) -> Catalog {
        Catalog::new(
            (0..n)
                .map(|i| ItemMeta {
                    item_id: ItemId::new(format!("i{i}")),
                    title: format!("Item {i}"),
                    attributes: vec![],
                })
                .collect(),
        )
        .unwrap()
    }

    fn seqs(pairs: &[(&[usize], usize)]) -> Vec<IndexedSequence> {
        pairs
            .iter()
            .map(|(h, t)| IndexedSequence {
                history: h.to_vec(),
                target: *t,
            })
            .collect()
    }

    #[test]
    fn output_covers_the_item_scope_and_is_finite() {
        let params = IdRetrieverParams::init(17, 4, 1).unwrap();
        let logits = forward_indexed(&params, &[0, 3, 16, 3]).unwrap();
        assert_eq!(logits.len(), 17);
        assert!(logits.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn zero_embeddings_give_zero_logits() {
        let params = IdRetrieverParams::from_parts(
            Array2::zeros((5, 3)),
            Array2::eye(3),
            Array1::zeros(3),
        )
        .unwrap();
        let logits = forward_indexed(&params, &[1, 2]).unwrap();
        assert!(logits.iter().all(|&x| x == 0.0));
        // Uniform softmax over 5 items.
        let loss = ce_loss_indexed(&params, &seqs(&[(&[1, 2], 0)])).unwrap();
        assert!((loss - 5.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hand_unrolled_recurrence_matches() {
        // d=1, two items, a=0.5, B=[[1]], E=[[1],[2]].
        // h1 = 0.5*0 + 1*1 = 1; h2 = 0.5*1 + 1*2 = 2.5.
        // logits = [2.5*1, 2.5*2] = [2.5, 5.0].
        let params = IdRetrieverParams::from_parts(
            Array2::from_shape_vec((2, 1), vec![1.0, 2.0]).unwrap(),
            Array2::from_shape_vec((1, 1), vec![1.0]).unwrap(),
            Array1::zeros(1), // sigmoid(0) = 0.5
        )
        .unwrap();
        let logits = forward_indexed(&params, &[0, 1]).unwrap();
        assert!((logits[0] - 2.5).abs() < 1e-15);
        assert!((logits[1] - 5.0).abs() < 1e-15);
    }

    #[test]
    fn ce_loss_matches_direct_arithmetic() {
        // d=1 with E = [sqrt(10), 0, 0, 0] and x = [item0] produces logits
        // [10, 0, 0, 0]; the loss on target 0 is ln(1 + 3e^-10).
        let root = 10.0f64.sqrt();
        let params = IdRetrieverParams::from_parts(
            Array2::from_shape_vec((4, 1), vec![root, 0.0, 0.0, 0.0]).unwrap(),
            Array2::from_shape_vec((1, 1), vec![1.0]).unwrap(),
            Array1::zeros(1),
        )
        .unwrap();
        let logits = forward_indexed(&params, &[0]).unwrap();
        assert!((logits[0] - 10.0).abs() < 1e-12);
        let loss = ce_loss_indexed(&params, &seqs(&[(&[0], 0)])).unwrap();
        let expected = (1.0f64 + 3.0 * (-logits[0]).exp()).ln();
        // log-sum-exp groups (max + ln(..)) - s_y, so allow cancellation
        // noise around 10.0.
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 1.3619051493827e-4).abs() < 1e-9);
    }

    #[test]
    fn duplicated_batch_keeps_the_mean() {
        let params = IdRetrieverParams::init(6, 3, 2).unwrap();
        let single = seqs(&[(&[0, 1, 2], 3)]);
        let double = seqs(&[(&[0, 1, 2], 3), (&[0, 1, 2], 3)]);
        let a = ce_loss_indexed(&params, &single).unwrap();
        let b = ce_loss_indexed(&params, &double).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn empty_history_and_unknown_items_error() {
        let params = IdRetrieverParams::init(4, 2, 3).unwrap();
        assert!(matches!(
            forward_indexed(&params, &[]),
            Err(Error::InvalidInput(_))
        ));
        let catalog = tiny_catalog(4);
        assert!(matches!(
            id_forward(&params, &catalog, &[ItemId::new("nope")]),
            Err(Error::UnknownItem(_))
        ));
    }

    #[test]
    fn softmax_of_logits_normalizes() {
        let params = IdRetrieverParams::init(40, 8, 4).unwrap();
        let logits = forward_indexed(&params, &[5, 9, 12]).unwrap();
        let max = logits.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let exp = logits.mapv(|x| (x - max).exp());
        let sum: f64 = (&exp / exp.sum()).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn reversed_history_changes_the_logits() {
        let params = IdRetrieverParams::init(10, 4, 5).unwrap();
        let fwd = forward_indexed(&params, &[1, 2, 3]).unwrap();
        let rev = forward_indexed(&params, &[3, 2, 1]).unwrap();
        let diff = (&fwd - &rev).mapv(f64::abs).sum();
        assert!(diff > 1e-9, "order-insensitive logits");
    }

    #[test]
    fn hidden_state_respects_the_decay_bound() {
        let params = IdRetrieverParams::init(12, 6, 6).unwrap();
        let decay = params.decay();
        let a_max = decay.fold(0.0f64, |m, &x| m.max(x));
        let b_norm = params.input_map.iter().map(|x| x * x).sum::<f64>().sqrt();
        let e_max = (0..12)
            .map(|i| {
                params
                    .item_embeddings
                    .row(i)
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0f64, f64::max);
        let bound = b_norm * e_max / (1.0 - a_max);

        let history: Vec<usize> = (0..50).map(|t| t % 12).collect();
        let states = run_recurrence(&params, &history);
        for h in &states {
            let norm = h.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(norm <= bound + 1e-12, "norm {norm} exceeds bound {bound}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        // d=4, |I|=6 instance; central differences at eps=1e-5, relative
        // tolerance 1e-4, checked for every coordinate of E, B, and raw
        // decay.
        let params = IdRetrieverParams::init(6, 4, 7).unwrap();
        let batch = seqs(&[(&[0, 2, 4], 1), (&[5, 3], 0), (&[1, 1, 2, 3], 5)]);
        let (_, grads) = ce_loss_grad_indexed(&params, &batch).unwrap();
        let analytic = grads.flatten();

        let eps = 1e-5;
        let flat = params.flatten();
        for i in 0..flat.len() {
            let mut plus = flat.clone();
            plus[i] += eps;
            let mut minus = flat.clone();
            minus[i] -= eps;
            let lp = ce_loss_indexed(
                &IdRetrieverParams::from_flat(6, 4, &plus).unwrap(),
                &batch,
            )
            .unwrap();
            let lm = ce_loss_indexed(
                &IdRetrieverParams::from_flat(6, 4, &minus).unwrap(),
                &batch,
            )
            .unwrap();
            let numeric = (lp - lm) / (2.0 * eps);
            let denom = numeric.abs().max(analytic[i].abs()).max(1e-8);
            assert!(
                (numeric - analytic[i]).abs() / denom < 1e-4,
                "param {i}: numeric {numeric} vs analytic {}",
                analytic[i]
            );
        }
    }

    #[test]
    fn zero_learning_rate_leaves_params_bit_identical() {
        let catalog = tiny_catalog(6);
        let data: Vec<UserSequence> = (0..4)
            .map(|u| UserSequence {
                user_id: crate::data::UserId::new(format!("u{u}")),
                history: vec![ItemId::new(format!("i{}", u % 6)), ItemId::new("i1")],
                target: ItemId::new(format!("i{}", (u + 2) % 6)),
            })
            .collect();
        let params = IdRetrieverParams::init(6, 4, 8).unwrap();
        let cfg = IdTrainConfig {
            learning_rate: 0.0,
            local_epochs: 3,
            batch_size: 2,
            seed: 1,
            optimizer: Optimizer::Sgd,
        };
        let trained = id_train_local(&params, &catalog, &data, &cfg).unwrap();
        assert_eq!(trained.flatten(), params.flatten());
    }

    #[test]
    fn one_small_step_reduces_the_loss() {
        let catalog = tiny_catalog(6);
        let data = vec![UserSequence {
            user_id: crate::data::UserId::new("u"),
            history: vec![ItemId::new("i0"), ItemId::new("i3")],
            target: ItemId::new("i2"),
        }];
        let params = IdRetrieverParams::init(6, 4, 9).unwrap();
        let before = id_ce_loss(&params, &catalog, &data).unwrap();
        let cfg = IdTrainConfig {
            learning_rate: 1e-3,
            local_epochs: 1,
            batch_size: 1,
            seed: 2,
            optimizer: Optimizer::Sgd,
        };
        let trained = id_train_local(&params, &catalog, &data, &cfg).unwrap();
        let after = id_ce_loss(&trained, &catalog, &data).unwrap();
        assert!(after < before, "loss {before} -> {after}");
    }

    #[test]
    fn training_is_seed_reproducible() {
        let catalog = tiny_catalog(6);
        let data: Vec<UserSequence> = (0..6)
            .map(|u| UserSequence {
                user_id: crate::data::UserId::new(format!("u{u}")),
                history: vec![ItemId::new(format!("i{}", u % 6))],
                target: ItemId::new(format!("i{}", (u + 1) % 6)),
            })
            .collect();
        let params = IdRetrieverParams::init(6, 4, 10).unwrap();
        let cfg = IdTrainConfig {
            learning_rate: 1e-2,
            local_epochs: 2,
            batch_size: 2,
            seed: 3,
            optimizer: Optimizer::Sgd,
        };
        let a = id_train_local(&params, &catalog, &data, &cfg).unwrap();
        let b = id_train_local(&params, &catalog, &data, &cfg).unwrap();
        assert_eq!(a.flatten(), b.flatten());
    }

    #[test]
    fn explicit_decay_parameterization_round_trips() {
        let raw = logit(0.25);
        let params = IdRetrieverParams::from_parts(
            Array2::zeros((2, 1)),
            Array2::eye(1),
            Array1::from_vec(vec![raw]),
        )
        .unwrap();
        assert!((params.decay()[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn flatten_round_trips() {
        let params = IdRetrieverParams::init(7, 3, 11).unwrap();
        let flat = params.flatten();
        let back = IdRetrieverParams::from_flat(7, 3, &flat).unwrap();
        assert_eq!(back, params);
    }
}
