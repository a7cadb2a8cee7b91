//! User-disjoint federated partitioning.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{FederatedSplit, SplitConfig, SplitMode, UserId, UserSequence};
use crate::error::{Error, Result};
use crate::rng;

const PARTITION_TAG: u64 = 0x7061_7274; // "part"

/// Splits sequences into exactly K clients of `users_per_client` users each;
/// every remaining user becomes a cold-start test user whose data never
/// reaches training.
///
/// Deterministic given the seed and independent of input order: sequences
/// are canonicalized by user id before the seeded shuffle.
pub fn partition_federated(
    sequences: &[UserSequence],
    config: &SplitConfig,
) -> Result<FederatedSplit> {
    if config.clients == 0 || config.users_per_client == 0 {
        return Err(Error::Config(
            "clients and users_per_client must be positive".to_string(),
        ));
    }
    let needed = config.clients * config.users_per_client;
    if needed > sequences.len() {
        return Err(Error::Config(format!(
            "need {needed} users for {} clients of {} but only {} are available",
            config.clients,
            config.users_per_client,
            sequences.len()
        )));
    }
    let mut seen = HashSet::new();
    for seq in sequences {
        if !seen.insert(&seq.user_id) {
            return Err(Error::Integrity(format!(
                "duplicate user id {} in sequence list",
                seq.user_id
            )));
        }
    }

    let mut pool: Vec<&UserSequence> = sequences.iter().collect();
    pool.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    let mut rand_stream = rng::rng_from(config.seed, &[PARTITION_TAG]);
    pool.shuffle(&mut rand_stream);

    let mut clients: Vec<Vec<UserSequence>> = match config.mode {
        SplitMode::UniformRandom => pool[..needed]
            .chunks(config.users_per_client)
            .map(|chunk| chunk.iter().map(|s| (*s).clone()).collect())
            .collect(),
        SplitMode::ItemDisjointHeterogeneous => assign_by_item_overlap(&pool[..needed], config),
    };
    let mut test_users: Vec<UserSequence> = pool[needed..].iter().map(|s| (*s).clone()).collect();

    for client in &mut clients {
        client.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    }
    test_users.sort_by(|a, b| a.user_id.cmp(&b.user_id));

    Ok(FederatedSplit {
        clients,
        test_users,
        seed: config.seed,
    })
}

/// Greedy placement: each user joins the open client whose accumulated item
/// scope overlaps their own items the most, so clusters of users sharing
/// items end up together and per-client scopes drift apart.
fn assign_by_item_overlap(pool: &[&UserSequence], config: &SplitConfig) -> Vec<Vec<UserSequence>> {
    let k = config.clients;
    let cap = config.users_per_client;
    let mut clients: Vec<Vec<UserSequence>> = vec![Vec::new(); k];
    let mut scopes: Vec<HashSet<&str>> = vec![HashSet::new(); k];

    for seq in pool {
        let items: Vec<&str> = seq
            .history
            .iter()
            .chain(std::iter::once(&seq.target))
            .map(|i| i.as_str())
            .collect();
        let mut best: Option<(usize, usize)> = None; // (overlap, client)
        for (c, scope) in scopes.iter().enumerate() {
            if clients[c].len() >= cap {
                continue;
            }
            let overlap = items.iter().filter(|i| scope.contains(**i)).count();
            // Ties go to the emptier client, then the lower index, so the
            // first users seed distinct clients instead of piling up.
            let better = match best {
                None => true,
                Some((bo, bc)) => {
                    overlap > bo || (overlap == bo && clients[c].len() < clients[bc].len())
                }
            };
            if better {
                best = Some((overlap, c));
            }
        }
        let (_, chosen) = best.expect("pool size equals total capacity");
        scopes[chosen].extend(items);
        clients[chosen].push((*seq).clone());
    }
    clients
}

/// Reproducibility record for a split: who went where, under which seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub clients: Vec<Vec<UserId>>,
    pub test_users: Vec<UserId>,
}

impl SplitManifest {
    pub fn from_split(split: &FederatedSplit) -> Self {
        SplitManifest {
            seed: split.seed,
            clients: split
                .clients
                .iter()
                .map(|c| c.iter().map(|s| s.user_id.clone()).collect())
                .collect(),
            test_users: split.test_users.iter().map(|s| s.user_id.clone()).collect(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let display = path.display().to_string();
        let file = File::create(path).map_err(|e| Error::io(&display, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let file = File::open(path).map_err(|e| Error::io(&display, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}
