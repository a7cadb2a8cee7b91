//! Dataset ingestion, preprocessing, and federated partitioning.
//!
//! The raw unit is an [`Interaction`] (user, item, timestamp). Interactions
//! are 5-core filtered, grouped into per-user [`UserSequence`]s with the last
//! item held out as the prediction target, and partitioned into user-disjoint
//! client datasets plus a cold-start test set.

mod five_core;
mod load;
mod partition;
mod sequence;
mod synth;

pub use five_core::five_core_filter;
pub use load::{load_catalog, load_interactions};
pub use partition::{SplitManifest, partition_federated};
pub use sequence::{DEFAULT_MAX_LEN, SequenceBuild, build_sequences};
pub use synth::{SynthConfig, synth_heterogeneous};

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque user identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub String);

/// Opaque item identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(pub String);

impl UserId {
    pub fn new(s: impl Into<String>) -> Self {
        UserId(s.into())
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl ItemId {
    pub fn new(s: impl Into<String>) -> Self {
        ItemId(s.into())
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A single user-item interaction at a point in time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: UserId,
    pub item_id: ItemId,
    /// Seconds; only compared, never interpreted as a calendar date.
    pub timestamp: i64,
}

/// Textual metadata for one item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub item_id: ItemId,
    pub title: String,
    /// Category/genre labels; may be empty.
    #[serde(default)]
    pub attributes: Vec<String>,
}

/// The item scope: item id -> metadata, with a canonical dense index.
///
/// Items are held sorted by id, so index order and lexical id order agree.
/// Score vectors produced by the retrievers are indexed by this order.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    items: Vec<ItemMeta>,
    index: HashMap<ItemId, usize>,
}

impl Catalog {
    /// Builds a catalog, sorting by item id and rejecting duplicates and
    /// empty titles.
    pub fn new(mut items: Vec<ItemMeta>) -> Result<Self> {
        items.sort_by(|a, b| a.item_id.cmp(&b.item_id));
        let mut index = HashMap::with_capacity(items.len());
        for (i, meta) in items.iter().enumerate() {
            if meta.title.is_empty() {
                return Err(Error::Integrity(format!(
                    "item {} has an empty title",
                    meta.item_id
                )));
            }
            if index.insert(meta.item_id.clone(), i).is_some() {
                return Err(Error::Integrity(format!(
                    "duplicate item id {} in catalog",
                    meta.item_id
                )));
            }
        }
        Ok(Catalog { items, index })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, id: &ItemId) -> bool {
        self.index.contains_key(id)
    }

    pub fn get(&self, id: &ItemId) -> Option<&ItemMeta> {
        self.index.get(id).map(|&i| &self.items[i])
    }

    /// Dense index of `id` in lexical id order.
    pub fn index_of(&self, id: &ItemId) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Like [`Catalog::index_of`] but errs with `UnknownItem`.
    pub fn require_index(&self, id: &ItemId) -> Result<usize> {
        self.index_of(id)
            .ok_or_else(|| Error::UnknownItem(id.to_string()))
    }

    pub fn require(&self, id: &ItemId) -> Result<&ItemMeta> {
        self.get(id).ok_or_else(|| Error::UnknownItem(id.to_string()))
    }

    pub fn meta_at(&self, index: usize) -> &ItemMeta {
        &self.items[index]
    }

    pub fn id_at(&self, index: usize) -> &ItemId {
        &self.items[index].item_id
    }

    pub fn iter(&self) -> impl Iterator<Item = &ItemMeta> {
        self.items.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = &ItemId> {
        self.items.iter().map(|m| &m.item_id)
    }
}

/// One user's chronological history `x` plus the held-out next item `y`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSequence {
    pub user_id: UserId,
    pub history: Vec<ItemId>,
    pub target: ItemId,
}

/// How users are distributed over clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Users sampled uniformly at random.
    #[default]
    UniformRandom,
    /// Greedy assignment that groups users with overlapping item scopes,
    /// driving per-client item scopes apart.
    ItemDisjointHeterogeneous,
}

/// Parameters for [`partition_federated`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Number of clients K.
    pub clients: usize,
    pub users_per_client: usize,
    pub seed: u64,
    #[serde(default)]
    pub mode: SplitMode,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            clients: 5,
            users_per_client: 1000,
            seed: 0,
            mode: SplitMode::UniformRandom,
        }
    }
}

/// K user-disjoint client datasets plus held-out cold-start test users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedSplit {
    pub clients: Vec<Vec<UserSequence>>,
    pub test_users: Vec<UserSequence>,
    pub seed: u64,
}

impl FederatedSplit {
    pub fn client_count(&self) -> usize {
        self.clients.len()
    }

    /// Union of item ids appearing in client `k`'s sequences (local scope).
    pub fn client_item_scope(&self, k: usize) -> std::collections::HashSet<&ItemId> {
        let mut scope = std::collections::HashSet::new();
        for seq in &self.clients[k] {
            scope.extend(seq.history.iter());
            scope.insert(&seq.target);
        }
        scope
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(id: &str, title: &str) -> ItemMeta {
        ItemMeta {
            item_id: ItemId::new(id),
            title: title.to_string(),
            attributes: vec![],
        }
    }

    #[test]
    fn catalog_orders_by_id() {
        let c = Catalog::new(vec![meta("b", "B"), meta("a", "A"), meta("c", "C")]).unwrap();
        assert_eq!(c.id_at(0).as_str(), "a");
        assert_eq!(c.index_of(&ItemId::new("c")), Some(2));
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn catalog_rejects_duplicates_and_empty_titles() {
        assert!(Catalog::new(vec![meta("a", "A"), meta("a", "A2")]).is_err());
        assert!(Catalog::new(vec![meta("a", "")]).is_err());
    }

    #[test]
    fn unknown_item_lookup_errors() {
        let c = Catalog::new(vec![meta("a", "A")]).unwrap();
        assert!(matches!(
            c.require_index(&ItemId::new("zz")),
            Err(Error::UnknownItem(_))
        ));
    }
}
