//! Text-based dense retriever.
//!
//! A compact trainable encoder over item texts: hashed bag-of-tokens mean
//! pooling followed by a linear projection and L2 normalization. Queries and
//! passages are rendered through the templates in [`template`], scored by
//! temperature-scaled cosine similarity, and trained with InfoNCE against
//! uniformly sampled in-catalog negatives.

mod template;
mod tokenize;

pub use template::{
    PASSAGE_PREFIX, QUERY_PREFIX, RenderConfig, RenderedPassage, RenderedQuery, render_item_text,
    render_passage, render_query,
};
pub use tokenize::{fnv1a64, token_ids, tokenize};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::seq::{SliceRandom, index};
use serde::{Deserialize, Serialize};

use crate::data::{Catalog, ItemId, UserSequence};
use crate::error::{Error, Result};
use crate::optim::{OptimState, Optimizer};
use crate::rng;

pub const DEFAULT_VOCAB_SIZE: usize = 1 << 15;
pub const DEFAULT_TEXT_DIM: usize = 64;
pub const DEFAULT_TEMPERATURE: f64 = 0.05;
pub const DEFAULT_NEGATIVES: usize = 32;

/// Trainable parameters: token embeddings over the hashed vocabulary and a
/// square projection. The temperature is fixed, not trained.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoderParams {
    token_embeddings: Array2<f64>,
    projection: Array2<f64>,
    temperature: f64,
}

impl TextEncoderParams {
    pub fn init(vocab_size: usize, dim: usize, temperature: f64, seed: u64) -> Result<Self> {
        if vocab_size == 0 || dim == 0 {
            return Err(Error::Config(
                "text encoder needs a positive vocabulary size and dimension".to_string(),
            ));
        }
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::Config(format!(
                "temperature {temperature} must be positive and finite"
            )));
        }
        let mut stream = rng::rng_from(seed, &[]);
        let bound = 1.0 / (dim as f64).sqrt();
        let mut uniform = |n: usize| -> Vec<f64> {
            (0..n).map(|_| stream.random_range(-bound..bound)).collect()
        };
        Ok(TextEncoderParams {
            token_embeddings: Array2::from_shape_vec((vocab_size, dim), uniform(vocab_size * dim))
                .expect("shape matches length"),
            projection: Array2::from_shape_vec((dim, dim), uniform(dim * dim))
                .expect("shape matches length"),
            temperature,
        })
    }

    pub fn from_parts(
        token_embeddings: Array2<f64>,
        projection: Array2<f64>,
        temperature: f64,
    ) -> Result<Self> {
        let dim = token_embeddings.ncols();
        if projection.nrows() != dim || projection.ncols() != dim {
            return Err(Error::Shape(format!(
                "token embeddings {:?} and projection {:?} are inconsistent",
                token_embeddings.dim(),
                projection.dim()
            )));
        }
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::Config(format!(
                "temperature {temperature} must be positive and finite"
            )));
        }
        Ok(TextEncoderParams {
            token_embeddings,
            projection,
            temperature,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.token_embeddings.nrows()
    }

    pub fn dim(&self) -> usize {
        self.token_embeddings.ncols()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn param_count(&self) -> usize {
        self.token_embeddings.len() + self.projection.len()
    }

    /// Trainable parameters only: embeddings row-major, then projection.
    /// The fixed temperature travels in checkpoint metadata instead.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        flat.extend(self.token_embeddings.iter());
        flat.extend(self.projection.iter());
        flat
    }

    pub fn from_flat(
        vocab_size: usize,
        dim: usize,
        temperature: f64,
        flat: &[f64],
    ) -> Result<Self> {
        let expected = vocab_size * dim + dim * dim;
        if flat.len() != expected {
            return Err(Error::Shape(format!(
                "flat vector has {} entries, expected {expected}",
                flat.len()
            )));
        }
        let (e, w) = flat.split_at(vocab_size * dim);
        Self::from_parts(
            Array2::from_shape_vec((vocab_size, dim), e.to_vec()).expect("split sizes"),
            Array2::from_shape_vec((dim, dim), w.to_vec()).expect("split sizes"),
            temperature,
        )
    }
}

/// Forward-pass intermediates kept for backprop.
struct EncodeTrace {
    tokens: Vec<usize>,
    pooled: Array1<f64>,
    norm: f64,
    out: Array1<f64>,
}

fn encode_trace(params: &TextEncoderParams, text: &str) -> Result<EncodeTrace> {
    let mut tokens = token_ids(text, params.vocab_size());
    if tokens.is_empty() {
        return Err(Error::Encoding(format!(
            "text tokenizes to nothing: {text:?}"
        )));
    }
    // Pool in sorted bucket order so any permutation of the same token
    // multiset sums in the same order, bit for bit.
    tokens.sort_unstable();
    let mut pooled = Array1::zeros(params.dim());
    for &t in &tokens {
        pooled += &params.token_embeddings.row(t);
    }
    pooled /= tokens.len() as f64;
    let projected = params.projection.dot(&pooled);
    let norm = projected.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Encoding(
            "projection produced a zero or non-finite vector; parameters are degenerate"
                .to_string(),
        ));
    }
    let out = &projected / norm;
    Ok(EncodeTrace {
        tokens,
        pooled,
        norm,
        out,
    })
}

/// Encodes text to a unit vector in the retrieval space.
pub fn encode(params: &TextEncoderParams, text: &str) -> Result<Array1<f64>> {
    Ok(encode_trace(params, text)?.out)
}

/// Temperature-scaled cosine similarity; inputs must already be unit norm.
pub fn pair_score(query: &Array1<f64>, passage: &Array1<f64>, temperature: f64) -> f64 {
    query.dot(passage) / temperature
}

/// InfoNCE loss given the score row `[positive, negatives...]`, computed in
/// log-sum-exp form.
fn infonce_from_scores(scores: &Array1<f64>) -> f64 {
    let max = scores.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let lse = max + scores.mapv(|x| (x - max).exp()).sum().ln();
    lse - scores[0]
}

/// The universe negatives are drawn from during local training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NegativeScope {
    /// The whole item scope minus the positive.
    #[default]
    Global,
    /// Only items the client has seen in its own data. Items a client has
    /// never observed receive no negative gradient, which keeps cold-start
    /// items scoreable by their shared text instead of being memorized
    /// away.
    ClientLocal,
}

/// Uniform sample of `n_negatives` positions from `universe_len` slots,
/// without replacement, skipping `positive_slot` when it lies inside the
/// universe.
fn sample_negative_slots(
    universe_len: usize,
    positive_slot: Option<usize>,
    n_negatives: usize,
    stream: &mut impl Rng,
) -> Vec<usize> {
    match positive_slot {
        Some(pos) => index::sample(stream, universe_len - 1, n_negatives)
            .iter()
            .map(|i| if i >= pos { i + 1 } else { i })
            .collect(),
        None => index::sample(stream, universe_len, n_negatives).iter().collect(),
    }
}

fn check_negative_count(universe_len: usize, n_negatives: usize) -> Result<()> {
    if n_negatives == 0 {
        return Err(Error::Config("n_negatives must be at least 1".to_string()));
    }
    if n_negatives + 1 > universe_len {
        return Err(Error::Config(format!(
            "item universe of {universe_len} cannot supply {n_negatives} negatives"
        )));
    }
    Ok(())
}

/// Negative catalog indices for one example: uniform without replacement
/// from the universe minus the positive. `universe` must be sorted when
/// given; `None` means the whole catalog.
fn negative_indices(
    catalog_len: usize,
    universe: Option<&[usize]>,
    positive_idx: usize,
    n_negatives: usize,
    stream: &mut impl Rng,
) -> Vec<usize> {
    match universe {
        None => sample_negative_slots(catalog_len, Some(positive_idx), n_negatives, stream),
        Some(u) => {
            let pos = u.binary_search(&positive_idx).ok();
            sample_negative_slots(u.len(), pos, n_negatives, stream)
                .into_iter()
                .map(|slot| u[slot])
                .collect()
        }
    }
}

fn scoped_universe_len(catalog: &Catalog, universe: Option<&[usize]>) -> usize {
    universe.map_or(catalog.len(), <[usize]>::len)
}

fn infonce_loss_scoped(
    params: &TextEncoderParams,
    batch: &[(String, ItemId)],
    catalog: &Catalog,
    render: &RenderConfig,
    n_negatives: usize,
    seed: u64,
    universe: Option<&[usize]>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("loss over an empty batch".to_string()));
    }
    check_negative_count(scoped_universe_len(catalog, universe), n_negatives)?;
    let mut total = 0.0;
    for (m, (query_text, positive)) in batch.iter().enumerate() {
        let positive_idx = catalog.require_index(positive)?;
        let mut stream = rng::rng_from(seed, &[m as u64]);
        let negatives =
            negative_indices(catalog.len(), universe, positive_idx, n_negatives, &mut stream);
        let q = encode(params, query_text)?;
        let mut scores = Array1::zeros(n_negatives + 1);
        let p_pos = encode(
            params,
            render_passage(catalog.id_at(positive_idx), catalog, render)?.as_str(),
        )?;
        scores[0] = pair_score(&q, &p_pos, params.temperature);
        for (slot, &neg) in negatives.iter().enumerate() {
            let p_neg = encode(
                params,
                render_passage(catalog.id_at(neg), catalog, render)?.as_str(),
            )?;
            scores[slot + 1] = pair_score(&q, &p_neg, params.temperature);
        }
        total += infonce_from_scores(&scores);
    }
    Ok(total / batch.len() as f64)
}

/// Mean InfoNCE over `(query text, positive item)` pairs, with `n_negatives`
/// uniform negatives per example drawn from the catalog minus the positive.
pub fn infonce_loss(
    params: &TextEncoderParams,
    batch: &[(String, ItemId)],
    catalog: &Catalog,
    render: &RenderConfig,
    n_negatives: usize,
    seed: u64,
) -> Result<f64> {
    infonce_loss_scoped(params, batch, catalog, render, n_negatives, seed, None)
}

/// Gradients in parameter layout order.
#[derive(Debug, Clone)]
pub struct TextGradients {
    pub token_embeddings: Array2<f64>,
    pub projection: Array2<f64>,
}

impl TextGradients {
    fn zeros(params: &TextEncoderParams) -> Self {
        TextGradients {
            token_embeddings: Array2::zeros(params.token_embeddings.dim()),
            projection: Array2::zeros(params.projection.dim()),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        flat.extend(self.token_embeddings.iter());
        flat.extend(self.projection.iter());
        flat
    }
}

/// Backprop through normalize -> projection -> mean pooling for one text.
fn backprop_encode(
    params: &TextEncoderParams,
    trace: &EncodeTrace,
    g_out: &Array1<f64>,
    grads: &mut TextGradients,
) {
    // d/dv of v/||v||: (g - q (q . g)) / ||v||
    let q_dot_g = trace.out.dot(g_out);
    let g_projected = (g_out - &(&trace.out * q_dot_g)) / trace.norm;
    for (r, &g) in g_projected.iter().enumerate() {
        if g != 0.0 {
            grads.projection.row_mut(r).scaled_add(g, &trace.pooled);
        }
    }
    let g_pooled = params.projection.t().dot(&g_projected);
    let per_token = &g_pooled / trace.tokens.len() as f64;
    for &t in &trace.tokens {
        grads.token_embeddings.row_mut(t).scaled_add(1.0, &per_token);
    }
}

fn infonce_grad_scoped(
    params: &TextEncoderParams,
    batch: &[(String, ItemId)],
    catalog: &Catalog,
    render: &RenderConfig,
    n_negatives: usize,
    seed: u64,
    universe: Option<&[usize]>,
) -> Result<(f64, TextGradients)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("loss over an empty batch".to_string()));
    }
    check_negative_count(scoped_universe_len(catalog, universe), n_negatives)?;
    let scale = 1.0 / batch.len() as f64;
    let mut grads = TextGradients::zeros(params);
    let mut total = 0.0;

    for (m, (query_text, positive)) in batch.iter().enumerate() {
        let positive_idx = catalog.require_index(positive)?;
        let mut stream = rng::rng_from(seed, &[m as u64]);
        let negatives =
            negative_indices(catalog.len(), universe, positive_idx, n_negatives, &mut stream);

        let q_trace = encode_trace(params, query_text)?;
        let mut passage_traces = Vec::with_capacity(n_negatives + 1);
        passage_traces.push(encode_trace(
            params,
            render_passage(catalog.id_at(positive_idx), catalog, render)?.as_str(),
        )?);
        for &neg in &negatives {
            passage_traces.push(encode_trace(
                params,
                render_passage(catalog.id_at(neg), catalog, render)?.as_str(),
            )?);
        }

        let scores = Array1::from_iter(
            passage_traces
                .iter()
                .map(|p| pair_score(&q_trace.out, &p.out, params.temperature)),
        );
        total += infonce_from_scores(&scores);

        // d loss / d scores = softmax(scores) - one_hot(0)
        let max = scores.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let exp = scores.mapv(|x| (x - max).exp());
        let mut g_scores = &exp / exp.sum();
        g_scores[0] -= 1.0;
        g_scores *= scale;

        let inv_tau = 1.0 / params.temperature;
        let mut g_q = Array1::zeros(params.dim());
        for (i, p) in passage_traces.iter().enumerate() {
            let g = g_scores[i] * inv_tau;
            g_q.scaled_add(g, &p.out);
            let g_p = &q_trace.out * g;
            backprop_encode(params, p, &g_p, &mut grads);
        }
        backprop_encode(params, &q_trace, &g_q, &mut grads);
    }
    Ok((total * scale, grads))
}

/// Loss plus gradients w.r.t. token embeddings and projection.
pub fn infonce_loss_with_grad(
    params: &TextEncoderParams,
    batch: &[(String, ItemId)],
    catalog: &Catalog,
    render: &RenderConfig,
    n_negatives: usize,
    seed: u64,
) -> Result<(f64, TextGradients)> {
    infonce_grad_scoped(params, batch, catalog, render, n_negatives, seed, None)
}

/// Local training configuration for the text retriever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextTrainConfig {
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub n_negatives: usize,
    pub negative_scope: NegativeScope,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub render: RenderConfig,
}

impl Default for TextTrainConfig {
    fn default() -> Self {
        TextTrainConfig {
            learning_rate: 1e-6,
            local_epochs: 2,
            batch_size: 32,
            n_negatives: DEFAULT_NEGATIVES,
            negative_scope: NegativeScope::Global,
            seed: 0,
            optimizer: Optimizer::Sgd,
            render: RenderConfig::default(),
        }
    }
}

const TAG_BATCH_NEGATIVES: u64 = 0x6e65_67; // "neg"

/// Renders (query, target) pairs from the client sequences and runs seeded
/// minibatch InfoNCE training.
pub fn text_train_local(
    params: &TextEncoderParams,
    catalog: &Catalog,
    client_data: &[UserSequence],
    cfg: &TextTrainConfig,
) -> Result<TextEncoderParams> {
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

    // Client-local scope: the sorted set of catalog indices this client has
    // actually observed.
    let universe: Option<Vec<usize>> = match cfg.negative_scope {
        NegativeScope::Global => None,
        NegativeScope::ClientLocal => {
            let mut seen = std::collections::BTreeSet::new();
            for seq in client_data {
                for id in seq.history.iter().chain(std::iter::once(&seq.target)) {
                    seen.insert(catalog.require_index(id)?);
                }
            }
            Some(seen.into_iter().collect())
        }
    };
    check_negative_count(
        scoped_universe_len(catalog, universe.as_deref()),
        cfg.n_negatives,
    )?;

    let pairs: Vec<(String, ItemId)> = client_data
        .iter()
        .map(|seq| {
            Ok((
                render_query(&seq.history, catalog, &cfg.render)?.into_string(),
                seq.target.clone(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut trained = params.clone();
    let mut state = OptimState::new(trained.param_count(), &cfg.optimizer);
    let e_len = trained.token_embeddings.len();

    for epoch in 0..cfg.local_epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng::rng_from(cfg.seed, &[epoch as u64]));
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(String, ItemId)> =
                chunk.iter().map(|&i| pairs[i].clone()).collect();
            let negative_seed = rng::derive_seed(
                cfg.seed,
                &[TAG_BATCH_NEGATIVES, epoch as u64, batch_idx as u64],
            );
            let (loss, grads) = infonce_grad_scoped(
                &trained,
                &batch,
                catalog,
                &cfg.render,
                cfg.n_negatives,
                negative_seed,
                universe.as_deref(),
            )?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    batch: batch_idx,
                    message: format!("InfoNCE loss is {loss}"),
                });
            }
            state.tick();
            state.apply(
                &cfg.optimizer,
                cfg.learning_rate,
                0,
                trained.token_embeddings.as_slice_mut().expect("contiguous"),
                grads.token_embeddings.as_slice().expect("contiguous"),
            );
            state.apply(
                &cfg.optimizer,
                cfg.learning_rate,
                e_len,
                trained.projection.as_slice_mut().expect("contiguous"),
                grads.projection.as_slice().expect("contiguous"),
            );
        }
    }
    Ok(trained)
}

/// Scores the whole catalog against one query: `s_j = <q, p_j> / tau` in
/// catalog index order. Encodes every passage; for repeated queries against
/// fixed parameters build a [`PassageIndex`] instead.
pub fn text_score_catalog(
    params: &TextEncoderParams,
    query_text: &str,
    catalog: &Catalog,
    render: &RenderConfig,
) -> Result<Vec<f64>> {
    if catalog.is_empty() {
        return Err(Error::InvalidInput(
            "cannot score an empty catalog".to_string(),
        ));
    }
    let q = encode(params, query_text)?;
    let mut scores = Vec::with_capacity(catalog.len());
    for j in 0..catalog.len() {
        let p = encode(params, render_passage(catalog.id_at(j), catalog, render)?.as_str())?;
        scores.push(pair_score(&q, &p, params.temperature));
    }
    Ok(scores)
}

/// Precomputed passage matrix bound to a parameter snapshot.
///
/// The index owns a copy of the parameters it was built from, so a stale
/// matrix can never be paired with updated weights: after a parameter
/// update, scoring with the new weights requires building a new index.
#[derive(Debug, Clone)]
pub struct PassageIndex {
    params: TextEncoderParams,
    matrix: Array2<f64>,
}

impl PassageIndex {
    pub fn build(
        params: &TextEncoderParams,
        catalog: &Catalog,
        render: &RenderConfig,
    ) -> Result<Self> {
        if catalog.is_empty() {
            return Err(Error::InvalidInput(
                "cannot index an empty catalog".to_string(),
            ));
        }
        let mut matrix = Array2::zeros((catalog.len(), params.dim()));
        for j in 0..catalog.len() {
            let p = encode(params, render_passage(catalog.id_at(j), catalog, render)?.as_str())?;
            matrix.row_mut(j).assign(&p);
        }
        Ok(PassageIndex {
            params: params.clone(),
            matrix,
        })
    }

    pub fn params(&self) -> &TextEncoderParams {
        &self.params
    }

    /// Scores the indexed catalog against `query_text` using the snapshot
    /// parameters.
    pub fn score(&self, query_text: &str) -> Result<Vec<f64>> {
        let q = encode(&self.params, query_text)?;
        let scores = self.matrix.dot(&q) / self.params.temperature;
        Ok(scores.to_vec())
    }
}
