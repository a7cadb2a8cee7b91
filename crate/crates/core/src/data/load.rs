//! File ingestion: interactions TSV and item-metadata JSON lines.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::data::{Catalog, Interaction, ItemId, ItemMeta, UserId};
use crate::error::{Error, Result};

const HEADER: &str = "user_id\titem_id\ttimestamp";

/// Reads a catalog from a JSON-lines file, one `{item_id, title, attributes}`
/// object per line.
pub fn load_catalog(path: &Path) -> Result<Catalog> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&display, e))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&display, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let meta: ItemMeta = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: display.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if meta.title.is_empty() {
            return Err(Error::Parse {
                path: display.clone(),
                line: i + 1,
                message: format!("item {} has an empty title", meta.item_id),
            });
        }
        items.push(meta);
    }
    Catalog::new(items)
}

/// Reads interactions from a headered TSV file and item metadata from a
/// JSON-lines file, checking that every referenced item has metadata.
///
/// Row order is preserved as read. Empty files yield an empty list and an
/// empty catalog.
pub fn load_interactions(
    interactions_path: &Path,
    items_path: &Path,
) -> Result<(Vec<Interaction>, Catalog)> {
    let catalog = load_catalog(items_path)?;
    let display = interactions_path.display().to_string();
    let file = File::open(interactions_path).map_err(|e| Error::io(&display, e))?;

    let mut interactions = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&display, e))?;
        let lineno = i + 1;
        if i == 0 {
            if line != HEADER {
                return Err(Error::Parse {
                    path: display,
                    line: 1,
                    message: format!("expected header `{HEADER}`, found `{line}`"),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: display,
                line: lineno,
                message: format!("expected 3 tab-separated columns, found {}", fields.len()),
            });
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                path: display,
                line: lineno,
                message: "empty user_id or item_id".to_string(),
            });
        }
        let timestamp: i64 = fields[2].parse().map_err(|_| Error::Parse {
            path: display.clone(),
            line: lineno,
            message: format!("non-integer timestamp `{}`", fields[2]),
        })?;
        if timestamp < 0 {
            return Err(Error::Parse {
                path: display,
                line: lineno,
                message: format!("negative timestamp {timestamp}"),
            });
        }
        let item_id = ItemId::new(fields[1]);
        if !catalog.contains(&item_id) {
            return Err(Error::Integrity(format!(
                "interaction at {display}:{lineno} references item {item_id} with no metadata"
            )));
        }
        interactions.push(Interaction {
            user_id: UserId::new(fields[0]),
            item_id,
            timestamp,
        });
    }
    Ok((interactions, catalog))
}
