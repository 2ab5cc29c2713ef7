//! Codebook persistence.
//!
//! Layout: one line of JSON header terminated by `\n`, followed by one
//! `SIDEMB01` matrix block per level (rows = codewords).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Codebook, LevelStats, RqConfig, RqModel};
use crate::datamodel::{read_matrix_block, write_matrix_block};
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    levels: usize,
    sizes: Vec<usize>,
    dim: usize,
    seed: u64,
    model_hash: String,
    config: RqConfig,
    fit_stats: Vec<LevelStats>,
}

pub fn model_to_bytes(model: &RqModel) -> Result<Vec<u8>> {
    let header = Header {
        version: MODEL_FORMAT_VERSION,
        levels: model.levels(),
        sizes: model.sizes(),
        dim: model.dim(),
        seed: model.config().seed,
        model_hash: model.hash().to_owned(),
        config: model.config().clone(),
        fit_stats: model.fit_stats().to_vec(),
    };
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    for cb in model.codebooks() {
        write_matrix_block(&mut bytes, cb.size(), model.dim(), cb.centroids());
    }
    Ok(bytes)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<RqModel> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::ModelFormat("missing header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..newline])?;
    if header.version != MODEL_FORMAT_VERSION {
        return Err(Error::ModelFormat(format!("unsupported version {}", header.version)));
    }
    if header.levels != header.sizes.len() || header.levels != header.config.levels() {
        return Err(Error::ModelFormat("level count disagrees with sizes".into()));
    }
    let mut offset = newline + 1;
    let mut codebooks = Vec::with_capacity(header.levels);
    for (h, &size) in header.sizes.iter().enumerate() {
        let (count, dim, values, used) = read_matrix_block(&bytes[offset..], offset as u64)?;
        if count != size || dim != header.dim {
            return Err(Error::ModelFormat(format!(
                "level {h} block is {count}×{dim}, header says {size}×{}",
                header.dim
            )));
        }
        codebooks.push(Codebook::new(h, dim, values)?);
        offset += used;
    }
    if offset != bytes.len() {
        return Err(Error::ModelFormat(format!("{} trailing bytes", bytes.len() - offset)));
    }
    let model = RqModel::from_codebooks(header.config, codebooks, header.fit_stats)?;
    if model.hash() != header.model_hash {
        return Err(Error::ModelFormat(format!(
            "model hash mismatch: header {} computed {}",
            header.model_hash,
            model.hash()
        )));
    }
    Ok(model)
}

pub fn save_model(path: impl AsRef<Path>, model: &RqModel) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<RqModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}
