//! Synthetic heterogeneous corpus generator.
//!
//! Builds the adversarial-for-ID-models scenario: clients hold pairwise
//! disjoint item-ID scopes, items across clients share a small attribute
//! vocabulary, and every cold-start test user's target is an item that no
//! training client has ever seen. Textual similarity crosses client
//! boundaries; item identity does not.


use rand::Rng;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::{Catalog, FederatedSplit, ItemId, ItemMeta, UserId, UserSequence};
use crate::error::{Error, Result};
use crate::rng;

const ATTR_WORDS: [&str; 24] = [
    "action", "comedy", "drama", "horror", "romance", "thriller", "fantasy", "mystery",
    "western", "animation", "documentary", "adventure", "crime", "family", "history",
    "musical", "scifi", "sport", "war", "biography", "noir", "superhero", "space", "nature",
];

const TAG_ITEMS: u64 = 1;
const TAG_TRAIN_USERS: u64 = 2;
const TAG_TEST_USERS: u64 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_clients: usize,
    /// Items exclusive to each client.
    pub items_per_client: usize,
    pub users_per_client: usize,
    /// Size of the shared attribute vocabulary.
    pub n_attributes: usize,
    /// Cold-start users whose targets appear on no client.
    pub test_users: usize,
    /// Items reserved for cold-start targets.
    pub test_items: usize,
    /// Nominal history length (individual users vary slightly below it).
    pub history_len: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_clients: 5,
            items_per_client: 40,
            users_per_client: 200,
            n_attributes: 12,
            test_users: 50,
            test_items: 50,
            history_len: 8,
            seed: 7,
        }
    }
}

fn attr_name(i: usize) -> String {
    if i < ATTR_WORDS.len() {
        ATTR_WORDS[i].to_string()
    } else {
        format!("genre{i}")
    }
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

/// Generates a catalog and federated split per the config. Byte-identical
/// for equal configs.
pub fn synth_heterogeneous(cfg: &SynthConfig) -> Result<(Catalog, FederatedSplit)> {
    if cfg.n_clients == 0
        || cfg.items_per_client == 0
        || cfg.users_per_client == 0
        || cfg.n_attributes == 0
        || cfg.history_len == 0
    {
        return Err(Error::Config(
            "synthetic generator counts must all be positive".to_string(),
        ));
    }
    if cfg.items_per_client < 2 {
        return Err(Error::Config(
            "items_per_client must be at least 2 to form (history, target) pairs".to_string(),
        ));
    }
    if cfg.test_users > 0 && cfg.test_items == 0 {
        return Err(Error::Config(
            "test_users requires a nonempty test item pool".to_string(),
        ));
    }

    let vocab: Vec<String> = (0..cfg.n_attributes).map(attr_name).collect();
    let n_train_items = cfg.n_clients * cfg.items_per_client;
    let total_items = n_train_items + cfg.test_items;

    // Items: contiguous id blocks per client, then the test-only block.
    // The first attribute cycles through the vocabulary within each block so
    // every block covers every attribute (given enough items); the second is
    // random. Attribute words are embedded in the title as well.
    let mut item_rng = rng::rng_from(cfg.seed, &[TAG_ITEMS]);
    let mut items = Vec::with_capacity(total_items);
    for idx in 0..total_items {
        let local = if idx < n_train_items {
            idx % cfg.items_per_client
        } else {
            idx - n_train_items
        };
        let first = local % cfg.n_attributes;
        let mut attrs = vec![vocab[first].clone()];
        if cfg.n_attributes > 1 {
            let mut second = item_rng.random_range(0..cfg.n_attributes - 1);
            if second >= first {
                second += 1;
            }
            attrs.push(vocab[second].clone());
        }
        let title = format!("{} {} story {:04}", capitalize(&attrs[0]), attrs.last().unwrap(), idx);
        items.push(ItemMeta {
            item_id: ItemId::new(format!("i{idx:05}")),
            title,
            attributes: attrs,
        });
    }

    let client_block = |k: usize| &items[k * cfg.items_per_client..(k + 1) * cfg.items_per_client];
    let test_block = &items[n_train_items..];

    // Per-attribute index into a block of items.
    let with_attr = |block: &[ItemMeta], attr: &str| -> Vec<ItemId> {
        block
            .iter()
            .filter(|m| m.attributes.iter().any(|a| a == attr))
            .map(|m| m.item_id.clone())
            .collect()
    };

    let mut clients = Vec::with_capacity(cfg.n_clients);
    for k in 0..cfg.n_clients {
        let block = client_block(k);
        let mut users = Vec::with_capacity(cfg.users_per_client);
        let mut user_rng = rng::rng_from(cfg.seed, &[TAG_TRAIN_USERS, k as u64]);
        for j in 0..cfg.users_per_client {
            let (attr, pool) = pick_preference(&vocab, &mut user_rng, |a| {
                let p = with_attr(block, a);
                (p.len() >= 2).then_some(p)
            })?;
            let _ = attr;
            let target_pos = user_rng.random_range(0..pool.len());
            let target = pool[target_pos].clone();
            let mut history_pool = pool;
            history_pool.remove(target_pos);
            let history = draw_history(&history_pool, cfg.history_len, &mut user_rng);
            users.push(UserSequence {
                user_id: UserId::new(format!("u{k}_{j:04}")),
                history,
                target,
            });
        }
        clients.push(users);
    }

    let mut test_users = Vec::with_capacity(cfg.test_users);
    let mut test_rng = rng::rng_from(cfg.seed, &[TAG_TEST_USERS]);
    let train_items = &items[..n_train_items];
    for j in 0..cfg.test_users {
        // History comes from items the clients trained on; the target is
        // drawn from the block no client ever sees.
        let (attr, target_pool) = pick_preference(&vocab, &mut test_rng, |a| {
            let t = with_attr(test_block, a);
            let h = with_attr(train_items, a);
            (!t.is_empty() && !h.is_empty()).then_some(t)
        })?;
        let history_pool = with_attr(train_items, &attr);
        let target = target_pool[test_rng.random_range(0..target_pool.len())].clone();
        let history = draw_history(&history_pool, cfg.history_len, &mut test_rng);
        test_users.push(UserSequence {
            user_id: UserId::new(format!("utest_{j:04}")),
            history,
            target,
        });
    }

    let catalog = Catalog::new(items)?;
    Ok((
        catalog,
        FederatedSplit {
            clients,
            test_users,
            seed: cfg.seed,
        },
    ))
}

/// Picks an attribute (seeded) whose candidate pool is viable, scanning the
/// whole vocabulary from a random start before giving up.
fn pick_preference<F>(
    vocab: &[String],
    stream: &mut impl Rng,
    mut pool_for: F,
) -> Result<(String, Vec<ItemId>)>
where
    F: FnMut(&str) -> Option<Vec<ItemId>>,
{
    let start = stream.random_range(0..vocab.len());
    for off in 0..vocab.len() {
        let attr = &vocab[(start + off) % vocab.len()];
        if let Some(pool) = pool_for(attr) {
            return Ok((attr.clone(), pool));
        }
    }
    Err(Error::Config(
        "no attribute has enough items to form a user preference".to_string(),
    ))
}

fn draw_history(pool: &[ItemId], nominal_len: usize, stream: &mut impl Rng) -> Vec<ItemId> {
    let jitter = stream.random_range(0..=2.min(nominal_len - 1));
    let len = nominal_len - jitter;
    if pool.len() >= len {
        index::sample(stream, pool.len(), len)
            .iter()
            .map(|i| pool[i].clone())
            .collect()
    } else {
        (0..len)
            .map(|_| pool[stream.random_range(0..pool.len())].clone())
            .collect()
    }
}
