//! Parameter checkpoints: a flat little-endian f64 array plus a JSON sidecar
//! with shapes and a content hash.
//!
//! `save_*` writes `<base>.bin` and `<base>.json`; `load_*` verifies the
//! SHA-256 of the binary payload against the sidecar before reconstructing
//! parameters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::id_retriever::IdRetrieverParams;
use crate::text_retriever::TextEncoderParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Model family: "id-retriever" or "text-encoder".
    pub kind: String,
    /// Named shapes in flat order.
    pub shapes: Vec<(String, Vec<usize>)>,
    /// Total f64 count in the binary file.
    pub len: usize,
    /// Hex SHA-256 of the binary payload.
    pub sha256: String,
    /// Fixed scalars that are not part of the flat vector.
    #[serde(default)]
    pub temperature: Option<f64>,
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

fn flat_to_bytes(flat: &[f64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(flat.len() * 8);
    for v in flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

fn bytes_to_flat(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint(format!(
            "binary payload of {} bytes is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn write_pair(base: &Path, flat: &[f64], meta: &CheckpointMeta) -> Result<()> {
    let bin_path = base.with_extension("bin");
    let json_path = base.with_extension("json");
    let bytes = flat_to_bytes(flat);
    let display = bin_path.display().to_string();
    let mut bin = BufWriter::new(File::create(&bin_path).map_err(|e| Error::io(&display, e))?);
    bin.write_all(&bytes).map_err(|e| Error::io(&display, e))?;
    bin.flush().map_err(|e| Error::io(&display, e))?;
    let display = json_path.display().to_string();
    let json = File::create(&json_path).map_err(|e| Error::io(&display, e))?;
    serde_json::to_writer_pretty(BufWriter::new(json), meta)?;
    Ok(())
}

fn read_pair(base: &Path) -> Result<(Vec<f64>, CheckpointMeta)> {
    let json_path = base.with_extension("json");
    let display = json_path.display().to_string();
    let meta: CheckpointMeta = serde_json::from_reader(BufReader::new(
        File::open(&json_path).map_err(|e| Error::io(&display, e))?,
    ))?;

    let bin_path = base.with_extension("bin");
    let display = bin_path.display().to_string();
    let mut bytes = Vec::new();
    File::open(&bin_path)
        .map_err(|e| Error::io(&display, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(&display, e))?;

    let digest = hex_digest(&bytes);
    if digest != meta.sha256 {
        return Err(Error::Checkpoint(format!(
            "content hash mismatch for {display}: sidecar {} vs payload {digest}",
            meta.sha256
        )));
    }
    let flat = bytes_to_flat(&bytes)?;
    if flat.len() != meta.len {
        return Err(Error::Checkpoint(format!(
            "sidecar claims {} values but payload holds {}",
            meta.len,
            flat.len()
        )));
    }
    Ok((flat, meta))
}

pub fn save_id(params: &IdRetrieverParams, base: &Path) -> Result<()> {
    let flat = params.flatten();
    let meta = CheckpointMeta {
        kind: "id-retriever".to_string(),
        shapes: vec![
            (
                "item_embeddings".to_string(),
                vec![params.n_items(), params.dim()],
            ),
            ("input_map".to_string(), vec![params.dim(), params.dim()]),
            ("raw_decay".to_string(), vec![params.dim()]),
        ],
        len: flat.len(),
        sha256: hex_digest(&flat_to_bytes(&flat)),
        temperature: None,
    };
    write_pair(base, &flat, &meta)
}

pub fn load_id(base: &Path) -> Result<IdRetrieverParams> {
    let (flat, meta) = read_pair(base)?;
    if meta.kind != "id-retriever" {
        return Err(Error::Checkpoint(format!(
            "expected an id-retriever checkpoint, found {}",
            meta.kind
        )));
    }
    let shape = meta
        .shapes
        .first()
        .filter(|(name, dims)| name == "item_embeddings" && dims.len() == 2)
        .ok_or_else(|| Error::Checkpoint("missing item_embeddings shape".to_string()))?;
    IdRetrieverParams::from_flat(shape.1[0], shape.1[1], &flat)
}

pub fn save_text(params: &TextEncoderParams, base: &Path) -> Result<()> {
    let flat = params.flatten();
    let meta = CheckpointMeta {
        kind: "text-encoder".to_string(),
        shapes: vec![
            (
                "token_embeddings".to_string(),
                vec![params.vocab_size(), params.dim()],
            ),
            ("projection".to_string(), vec![params.dim(), params.dim()]),
        ],
        len: flat.len(),
        sha256: hex_digest(&flat_to_bytes(&flat)),
        temperature: Some(params.temperature()),
    };
    write_pair(base, &flat, &meta)
}

pub fn load_text(base: &Path) -> Result<TextEncoderParams> {
    let (flat, meta) = read_pair(base)?;
    if meta.kind != "text-encoder" {
        return Err(Error::Checkpoint(format!(
            "expected a text-encoder checkpoint, found {}",
            meta.kind
        )));
    }
    let shape = meta
        .shapes
        .first()
        .filter(|(name, dims)| name == "token_embeddings" && dims.len() == 2)
        .ok_or_else(|| Error::Checkpoint("missing token_embeddings shape".to_string()))?;
    let temperature = meta
        .temperature
        .ok_or_else(|| Error::Checkpoint("missing temperature".to_string()))?;
    TextEncoderParams::from_flat(shape.1[0], shape.1[1], temperature, &flat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_checkpoint_round_trips_bit_exactly() {
        let params = IdRetrieverParams::init(9, 4, 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("id");
        save_id(&params, &base).unwrap();
        let loaded = load_id(&base).unwrap();
        assert_eq!(loaded.flatten(), params.flatten());
    }

    #[test]
    fn text_checkpoint_round_trips_bit_exactly() {
        let params = TextEncoderParams::init(32, 8, 0.07, 22).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("text");
        save_text(&params, &base).unwrap();
        let loaded = load_text(&base).unwrap();
        assert_eq!(loaded.flatten(), params.flatten());
        assert_eq!(loaded.temperature(), 0.07);
    }

    #[test]
    fn corrupted_payload_fails_the_hash_check() {
        let params = IdRetrieverParams::init(5, 3, 23).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("id");
        save_id(&params, &base).unwrap();
        // Flip one byte in the binary.
        let bin = base.with_extension("bin");
        let mut bytes = std::fs::read(&bin).unwrap();
        bytes[3] ^= 0xff;
        std::fs::write(&bin, &bytes).unwrap();
        assert!(matches!(load_id(&base), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let params = TextEncoderParams::init(16, 4, 0.05, 24).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("model");
        save_text(&params, &base).unwrap();
        assert!(matches!(load_id(&base), Err(Error::Checkpoint(_))));
    }
}
