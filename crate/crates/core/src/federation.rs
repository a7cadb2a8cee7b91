//! Federated orchestration: local rounds plus size-weighted averaging.
//!
//! Each global epoch broadcasts the current global parameters to every
//! client, runs both local trainers on the client's own data, and averages
//! the resulting parameter vectors weighted by client dataset size. The two
//! model families are aggregated by separate calls and can never mix.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Catalog, FederatedSplit};
use crate::error::{Error, Result};
use crate::id_retriever::{
    self, DEFAULT_ID_DIM, IdRetrieverParams, IdTrainConfig, id_train_local,
};
use crate::rng;
use crate::text_retriever::{
    self, DEFAULT_TEMPERATURE, DEFAULT_TEXT_DIM, DEFAULT_VOCAB_SIZE, TextEncoderParams,
    TextTrainConfig, text_train_local,
};

/// Shapes and init seeds shared by all clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub id_dim: usize,
    pub text_vocab_size: usize,
    pub text_dim: usize,
    pub temperature: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            id_dim: DEFAULT_ID_DIM,
            text_vocab_size: DEFAULT_VOCAB_SIZE,
            text_dim: DEFAULT_TEXT_DIM,
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

/// The aggregated server-side model.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub id_params: IdRetrieverParams,
    pub text_params: TextEncoderParams,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoundConfig {
    pub global_epochs: usize,
    pub id_cfg: IdTrainConfig,
    pub text_cfg: TextTrainConfig,
    /// Max clients training concurrently. Results are bit-identical at any
    /// parallelism: client RNG streams derive from (seed, client, round)
    /// and aggregation always reduces in client order.
    pub client_parallelism: usize,
}

impl Default for RoundConfig {
    fn default() -> Self {
        RoundConfig {
            global_epochs: 5,
            id_cfg: IdTrainConfig::default(),
            text_cfg: TextTrainConfig::default(),
            client_parallelism: 4,
        }
    }
}

/// Per-client, per-round training log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRoundLog {
    pub round: usize,
    pub client: usize,
    pub loss_id: f64,
    pub loss_text: f64,
    pub wall_ms: u64,
}

/// Coordinatewise weighted mean with weights normalized by their sum,
/// accumulated left to right.
///
/// Each output coordinate is clamped to the convex hull of the inputs:
/// summation error can overshoot the hull by an ulp, and the clamp keeps the
/// convex-combination bound and the all-identical fixed point exact.
pub fn fedavg(params: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
    if params.is_empty() || params.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} parameter vectors vs {} weights",
            params.len(),
            weights.len()
        )));
    }
    let len = params[0].len();
    if let Some((k, bad)) = params.iter().enumerate().find(|(_, p)| p.len() != len) {
        return Err(Error::Shape(format!(
            "client {k} has {} parameters, expected {len}",
            bad.len()
        )));
    }
    if let Some(&w) = weights.iter().find(|&&w| !(w > 0.0) || !w.is_finite()) {
        return Err(Error::Domain(format!(
            "weights must be strictly positive and finite, found {w}"
        )));
    }

    let total: f64 = weights.iter().sum();
    let normalized: Vec<f64> = weights.iter().map(|w| w / total).collect();

    let mut out = vec![0.0; len];
    for (param, &w) in params.iter().zip(&normalized) {
        for (o, &p) in out.iter_mut().zip(param) {
            *o += w * p;
        }
    }
    for i in 0..len {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in params {
            lo = lo.min(p[i]);
            hi = hi.max(p[i]);
        }
        out[i] = out[i].clamp(lo, hi);
    }
    Ok(out)
}

const TAG_ID_INIT: u64 = 0x6964_30; // "id0"
const TAG_TEXT_INIT: u64 = 0x7478_30; // "tx0"
const TAG_ID_ROUND: u64 = 0x6964_72; // "idr"
const TAG_TEXT_ROUND: u64 = 0x7478_72; // "txr"

/// Fresh global model with seeded init.
pub fn init_global_model(catalog: &Catalog, model: &ModelConfig, seed: u64) -> Result<GlobalModel> {
    Ok(GlobalModel {
        id_params: IdRetrieverParams::init(
            catalog.len(),
            model.id_dim,
            rng::derive_seed(seed, &[TAG_ID_INIT]),
        )?,
        text_params: TextEncoderParams::init(
            model.text_vocab_size,
            model.text_dim,
            model.temperature,
            rng::derive_seed(seed, &[TAG_TEXT_INIT]),
        )?,
        round: 0,
    })
}

struct ClientResult {
    id_params: IdRetrieverParams,
    text_params: TextEncoderParams,
    log: ClientRoundLog,
}

fn train_one_client(
    global: &GlobalModel,
    catalog: &Catalog,
    split: &FederatedSplit,
    cfg: &RoundConfig,
    seed: u64,
    round: usize,
    client: usize,
) -> Result<ClientResult> {
    let data = &split.clients[client];
    let started = Instant::now();
    let wrap = |source: Error| Error::ClientTraining {
        client,
        round,
        source: Box::new(source),
    };

    let mut id_cfg = cfg.id_cfg.clone();
    id_cfg.seed = rng::derive_seed(seed, &[TAG_ID_ROUND, round as u64, client as u64]);
    let id_params = id_train_local(&global.id_params, catalog, data, &id_cfg).map_err(wrap)?;

    let mut text_cfg = cfg.text_cfg.clone();
    text_cfg.seed = rng::derive_seed(seed, &[TAG_TEXT_ROUND, round as u64, client as u64]);
    let text_params =
        text_train_local(&global.text_params, catalog, data, &text_cfg).map_err(wrap)?;

    // Post-training losses on the full local dataset, for the metrics log.
    let loss_id = id_retriever::id_ce_loss(&id_params, catalog, data).map_err(wrap)?;
    let pairs: Vec<(String, crate::data::ItemId)> = data
        .iter()
        .map(|s| {
            Ok((
                text_retriever::render_query(&s.history, catalog, &text_cfg.render)?
                    .into_string(),
                s.target.clone(),
            ))
        })
        .collect::<Result<Vec<_>>>()
        .map_err(wrap)?;
    let loss_text = text_retriever::infonce_loss(
        &text_params,
        &pairs,
        catalog,
        &text_cfg.render,
        text_cfg.n_negatives,
        text_cfg.seed,
    )
    .map_err(wrap)?;

    Ok(ClientResult {
        id_params,
        text_params,
        log: ClientRoundLog {
            round,
            client,
            loss_id,
            loss_text,
            wall_ms: started.elapsed().as_millis() as u64,
        },
    })
}

/// Runs `global_epochs` federated rounds: broadcast, local training on every
/// client, then size-weighted aggregation of each model family separately.
///
/// `seed` feeds both model init and the per-(round, client) training
/// streams; two runs with the same inputs and seed produce identical
/// parameters.
pub fn run_federated_training(
    split: &FederatedSplit,
    catalog: &Catalog,
    model: &ModelConfig,
    cfg: &RoundConfig,
    seed: u64,
) -> Result<(GlobalModel, Vec<ClientRoundLog>)> {
    if split.clients.is_empty() {
        return Err(Error::Config("no clients in the split".to_string()));
    }
    if let Some(k) = split.clients.iter().position(|c| c.is_empty()) {
        return Err(Error::Config(format!("client {k} has no users")));
    }
    if cfg.global_epochs == 0 {
        return Err(Error::Config("global_epochs must be at least 1".to_string()));
    }
    if cfg.client_parallelism == 0 {
        return Err(Error::Config(
            "client_parallelism must be at least 1".to_string(),
        ));
    }

    let mut global = init_global_model(catalog, model, seed)?;
    let weights: Vec<f64> = split.clients.iter().map(|c| c.len() as f64).collect();
    let mut logs = Vec::new();

    for round in 0..cfg.global_epochs {
        let results = run_clients(split, catalog, cfg, &global, seed, round)?;

        let id_flat: Vec<Vec<f64>> = results.iter().map(|r| r.id_params.flatten()).collect();
        let text_flat: Vec<Vec<f64>> = results.iter().map(|r| r.text_params.flatten()).collect();
        let id_avg = fedavg(&id_flat, &weights)?;
        let text_avg = fedavg(&text_flat, &weights)?;

        global.id_params = IdRetrieverParams::from_flat(catalog.len(), model.id_dim, &id_avg)?;
        global.text_params = TextEncoderParams::from_flat(
            model.text_vocab_size,
            model.text_dim,
            model.temperature,
            &text_avg,
        )?;
        global.round = round + 1;
        logs.extend(results.into_iter().map(|r| r.log));
    }
    Ok((global, logs))
}

/// Trains all clients for one round, at most `client_parallelism` at a time,
/// returning results in client order.
fn run_clients(
    split: &FederatedSplit,
    catalog: &Catalog,
    cfg: &RoundConfig,
    global: &GlobalModel,
    seed: u64,
    round: usize,
) -> Result<Vec<ClientResult>> {
    let k = split.clients.len();
    if cfg.client_parallelism == 1 || k == 1 {
        return (0..k)
            .map(|c| train_one_client(global, catalog, split, cfg, seed, round, c))
            .collect();
    }

    let mut results: Vec<Option<Result<ClientResult>>> = (0..k).map(|_| None).collect();
    for chunk in (0..k).collect::<Vec<_>>().chunks(cfg.client_parallelism) {
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&c| {
                    scope.spawn(move || {
                        (c, train_one_client(global, catalog, split, cfg, seed, round, c))
                    })
                })
                .collect();
            for handle in handles {
                let (c, result) = handle.join().expect("client thread panicked");
                results[c] = Some(result);
            }
        });
    }
    results
        .into_iter()
        .map(|r| r.expect("every client produced a result"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ItemId, ItemMeta, UserId, UserSequence};
    use proptest::prelude::*;

    fn catalog(n: usize) -> Catalog {
        Catalog::new(
            (0..n)
                .map(|i| ItemMeta {
                    item_id: ItemId::new(format!("i{i:02}")),
                    title: format!("Item number {i}"),
                    attributes: vec![format!("tag{}", i % 3)],
                })
                .collect(),
        )
        .unwrap()
    }

    fn client(n_users: usize, catalog_len: usize, offset: usize) -> Vec<UserSequence> {
        (0..n_users)
            .map(|u| UserSequence {
                user_id: UserId::new(format!("c{offset}_u{u}")),
                history: vec![
                    ItemId::new(format!("i{:02}", (u + offset) % catalog_len)),
                    ItemId::new(format!("i{:02}", (u + offset + 1) % catalog_len)),
                ],
                target: ItemId::new(format!("i{:02}", (u + offset + 2) % catalog_len)),
            })
            .collect()
    }

    fn quick_round_cfg() -> RoundConfig {
        RoundConfig {
            global_epochs: 1,
            id_cfg: IdTrainConfig {
                learning_rate: 1e-2,
                local_epochs: 2,
                batch_size: 2,
                ..IdTrainConfig::default()
            },
            text_cfg: TextTrainConfig {
                learning_rate: 1e-2,
                local_epochs: 1,
                batch_size: 2,
                n_negatives: 2,
                ..TextTrainConfig::default()
            },
            client_parallelism: 1,
        }
    }

    fn small_model() -> ModelConfig {
        ModelConfig {
            id_dim: 4,
            text_vocab_size: 64,
            text_dim: 8,
            temperature: 0.05,
        }
    }

    #[test]
    fn fedavg_single_client_is_identity() {
        let input = vec![vec![1.5, -2.0, 3.25]];
        let out = fedavg(&input, &[7.0]).unwrap();
        assert_eq!(out, input[0]);
    }

    #[test]
    fn fedavg_matches_direct_arithmetic() {
        let out = fedavg(&[vec![1.0, 3.0], vec![6.0, 8.0]], &[2.0, 3.0]).unwrap();
        assert!((out[0] - 4.0).abs() < 1e-12);
        assert!((out[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn fedavg_identical_inputs_are_a_fixed_point() {
        let v = vec![0.1, -0.2, 0.3, 1e-8];
        let out = fedavg(&[v.clone(), v.clone(), v.clone()], &[1.0, 2.5, 0.3]).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn fedavg_rejects_bad_shapes_and_weights() {
        assert!(matches!(
            fedavg(&[vec![1.0], vec![1.0, 2.0]], &[1.0, 1.0]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            fedavg(&[vec![1.0], vec![2.0]], &[1.0, 0.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            fedavg(&[vec![1.0], vec![2.0]], &[1.0, -3.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(fedavg(&[], &[]), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn fedavg_stays_in_the_convex_hull(
            seed in any::<u64>(), k in 1usize..6, len in 1usize..40
        ) {
            let mut stream = crate::rng::rng_from(seed, &[]);
            use rand::Rng;
            let params: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..len).map(|_| stream.random_range(-5.0..5.0)).collect())
                .collect();
            let weights: Vec<f64> = (0..k).map(|_| stream.random_range(0.1..10.0)).collect();
            let out = fedavg(&params, &weights).unwrap();
            for i in 0..len {
                let lo = params.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min);
                let hi = params.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out[i] >= lo && out[i] <= hi);
            }
        }

        #[test]
        fn fedavg_is_invariant_to_power_of_two_weight_scaling(
            seed in any::<u64>(), exp in -3i32..9
        ) {
            let mut stream = crate::rng::rng_from(seed, &[1]);
            use rand::Rng;
            let params: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..16).map(|_| stream.random_range(-2.0..2.0)).collect())
                .collect();
            let weights: Vec<f64> = (0..3).map(|_| stream.random_range(0.5..4.0)).collect();
            let c = 2.0f64.powi(exp);
            let scaled: Vec<f64> = weights.iter().map(|w| w * c).collect();
            let a = fedavg(&params, &weights).unwrap();
            let b = fedavg(&params, &scaled).unwrap();
            prop_assert_eq!(a, b); // power-of-two scaling keeps w/W bit-exact

            // Arbitrary scalings agree to rounding error.
            let odd: Vec<f64> = weights.iter().map(|w| w * 3.341).collect();
            let c2 = fedavg(&params, &odd).unwrap();
            let a2 = fedavg(&params, &weights).unwrap();
            for (x, y) in a2.iter().zip(c2.iter()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn single_client_round_equals_centralized_training() {
        let catalog = catalog(8);
        let split = FederatedSplit {
            clients: vec![client(4, 8, 0)],
            test_users: vec![],
            seed: 0,
        };
        let cfg = quick_round_cfg();
        let seed = 31;
        let (global, logs) =
            run_federated_training(&split, &catalog, &small_model(), &cfg, seed).unwrap();
        assert_eq!(logs.len(), 1);

        // Reproduce by hand: init, one local train per family.
        let init = init_global_model(&catalog, &small_model(), seed).unwrap();
        let mut id_cfg = cfg.id_cfg.clone();
        id_cfg.seed = rng::derive_seed(seed, &[TAG_ID_ROUND, 0, 0]);
        let id = id_train_local(&init.id_params, &catalog, &split.clients[0], &id_cfg).unwrap();
        let mut text_cfg = cfg.text_cfg.clone();
        text_cfg.seed = rng::derive_seed(seed, &[TAG_TEXT_ROUND, 0, 0]);
        let text =
            text_train_local(&init.text_params, &catalog, &split.clients[0], &text_cfg).unwrap();

        assert_eq!(global.id_params.flatten(), id.flatten());
        assert_eq!(global.text_params.flatten(), text.flatten());
        assert_eq!(global.round, 1);
    }

    #[test]
    fn zero_learning_rates_leave_the_init_untouched() {
        let catalog = catalog(8);
        let split = FederatedSplit {
            clients: vec![client(3, 8, 0), client(3, 8, 3)],
            test_users: vec![],
            seed: 0,
        };
        let mut cfg = quick_round_cfg();
        cfg.global_epochs = 2;
        cfg.id_cfg.learning_rate = 0.0;
        cfg.text_cfg.learning_rate = 0.0;
        let seed = 5;
        let (global, _) =
            run_federated_training(&split, &catalog, &small_model(), &cfg, seed).unwrap();
        let init = init_global_model(&catalog, &small_model(), seed).unwrap();
        assert_eq!(global.id_params.flatten(), init.id_params.flatten());
        assert_eq!(global.text_params.flatten(), init.text_params.flatten());
    }

    #[test]
    fn equal_size_clients_average_to_the_unweighted_mean() {
        let catalog = catalog(8);
        let split = FederatedSplit {
            clients: vec![client(3, 8, 0), client(3, 8, 4)],
            test_users: vec![],
            seed: 0,
        };
        let cfg = quick_round_cfg();
        let seed = 77;
        let (global, _) =
            run_federated_training(&split, &catalog, &small_model(), &cfg, seed).unwrap();

        // Oracle: train each client independently from the same init and
        // average by hand.
        let init = init_global_model(&catalog, &small_model(), seed).unwrap();
        let mut by_hand: Vec<Vec<f64>> = Vec::new();
        for c in 0..2 {
            let mut id_cfg = cfg.id_cfg.clone();
            id_cfg.seed = rng::derive_seed(seed, &[TAG_ID_ROUND, 0, c as u64]);
            by_hand.push(
                id_train_local(&init.id_params, &catalog, &split.clients[c], &id_cfg)
                    .unwrap()
                    .flatten(),
            );
        }
        let got = global.id_params.flatten();
        for i in 0..got.len() {
            let mean = (by_hand[0][i] + by_hand[1][i]) / 2.0;
            assert!((got[i] - mean).abs() <= 1e-15, "coordinate {i}");
        }
    }

    #[test]
    fn parallel_and_serial_execution_are_bit_identical() {
        let catalog = catalog(8);
        let split = FederatedSplit {
            clients: vec![client(3, 8, 0), client(3, 8, 2), client(3, 8, 5)],
            test_users: vec![],
            seed: 0,
        };
        let mut serial = quick_round_cfg();
        serial.global_epochs = 2;
        let mut parallel = serial.clone();
        parallel.client_parallelism = 3;
        let seed = 13;
        let (a, _) =
            run_federated_training(&split, &catalog, &small_model(), &serial, seed).unwrap();
        let (b, _) =
            run_federated_training(&split, &catalog, &small_model(), &parallel, seed).unwrap();
        assert_eq!(a.id_params.flatten(), b.id_params.flatten());
        assert_eq!(a.text_params.flatten(), b.text_params.flatten());
    }

    #[test]
    fn empty_client_is_rejected() {
        let catalog = catalog(8);
        let split = FederatedSplit {
            clients: vec![client(3, 8, 0), vec![]],
            test_users: vec![],
            seed: 0,
        };
        assert!(matches!(
            run_federated_training(&split, &catalog, &small_model(), &quick_round_cfg(), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn family_separation_is_structural() {
        // The two families have different flat lengths, so a crossed
        // aggregation cannot even type-check shapes.
        let catalog = catalog(8);
        let model = small_model();
        let global = init_global_model(&catalog, &model, 3).unwrap();
        let id_flat = global.id_params.flatten();
        let text_flat = global.text_params.flatten();
        assert_ne!(id_flat.len(), text_flat.len());
        assert!(IdRetrieverParams::from_flat(catalog.len(), model.id_dim, &text_flat).is_err());
    }
}
