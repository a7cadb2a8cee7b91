//! Query/passage text rendering.
//!
//! Histories become `query: <item>; <item>; ...` and single items become
//! `passage: <item>`, where each item renders as
//! `<title>, an item about <attr1, attr2, ...>` (the attribute clause drops
//! when disabled or empty, and the noun phrase is configurable per domain,
//! e.g. "a movie about").

use serde::{Deserialize, Serialize};

use crate::data::{Catalog, ItemId, ItemMeta};
use crate::error::Result;

pub const QUERY_PREFIX: &str = "query: ";
pub const PASSAGE_PREFIX: &str = "passage: ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub include_attributes: bool,
    /// Render only the most recent `last_n` history items when set.
    pub last_n: Option<usize>,
    /// Connector between title and attributes.
    pub noun_phrase: String,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            include_attributes: true,
            last_n: Some(10),
            noun_phrase: "an item about".to_string(),
        }
    }
}

/// Rendered history text; always starts with `query: `.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedQuery(String);

/// Rendered single-item text; always starts with `passage: `.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPassage(String);

impl RenderedQuery {
    pub fn as_str(&self) -> &str {
        &self.0
    }
    pub fn into_string(self) -> String {
        self.0
    }
}

impl RenderedPassage {
    pub fn as_str(&self) -> &str {
        &self.0
    }
    pub fn into_string(self) -> String {
        self.0
    }
}

/// `<title>, an item about <a1, a2>`, or just `<title>` when attributes are
/// disabled or absent.
pub fn render_item_text(meta: &ItemMeta, cfg: &RenderConfig) -> String {
    if cfg.include_attributes && !meta.attributes.is_empty() {
        format!(
            "{}, {} {}",
            meta.title,
            cfg.noun_phrase,
            meta.attributes.join(", ")
        )
    } else {
        meta.title.clone()
    }
}

pub fn render_query(
    history: &[ItemId],
    catalog: &Catalog,
    cfg: &RenderConfig,
) -> Result<RenderedQuery> {
    if history.is_empty() {
        return Err(crate::error::Error::InvalidInput(
            "cannot render a query from an empty history".to_string(),
        ));
    }
    let start = match cfg.last_n {
        Some(n) => history.len().saturating_sub(n),
        None => 0,
    };
    let parts = history[start..]
        .iter()
        .map(|id| Ok(render_item_text(catalog.require(id)?, cfg)))
        .collect::<Result<Vec<_>>>()?;
    Ok(RenderedQuery(format!("{QUERY_PREFIX}{}", parts.join("; "))))
}

pub fn render_passage(
    item: &ItemId,
    catalog: &Catalog,
    cfg: &RenderConfig,
) -> Result<RenderedPassage> {
    let text = render_item_text(catalog.require(item)?, cfg);
    Ok(RenderedPassage(format!("{PASSAGE_PREFIX}{text}")))
}
