use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{RqModel, SidSequence};
use crate::datamodel::EmbeddingSet;
use crate::error::{Error, Result};

/// Item → SID mapping produced by one model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SidAssignment {
    item_ids: Vec<String>,
    sids: Vec<SidSequence>,
    index: HashMap<String, usize>,
    model_hash: String,
}

impl SidAssignment {
    pub fn new(item_ids: Vec<String>, sids: Vec<SidSequence>, model_hash: String) -> Result<Self> {
        if item_ids.len() != sids.len() {
            return Err(Error::DimMismatch {
                expected: item_ids.len(),
                actual: sids.len(),
            });
        }
        let mut index = HashMap::with_capacity(item_ids.len());
        for (pos, id) in item_ids.iter().enumerate() {
            if index.insert(id.clone(), pos).is_some() {
                return Err(Error::DuplicateItem(id.clone()));
            }
        }
        if let Some(first) = sids.first() {
            if let Some(bad) = sids.iter().find(|s| s.len() != first.len()) {
                return Err(Error::SidLength {
                    expected: first.len(),
                    actual: bad.len(),
                });
            }
        }
        Ok(SidAssignment {
            item_ids,
            sids,
            index,
            model_hash,
        })
    }

    pub fn len(&self) -> usize {
        self.sids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sids.is_empty()
    }

    /// SID depth (0 for an empty assignment).
    pub fn levels(&self) -> usize {
        self.sids.first().map_or(0, SidSequence::len)
    }

    pub fn get(&self, item_id: &str) -> Option<&SidSequence> {
        self.index.get(item_id).map(|&i| &self.sids[i])
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn sids(&self) -> &[SidSequence] {
        &self.sids
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &SidSequence)> {
        self.item_ids.iter().map(String::as_str).zip(&self.sids)
    }

    pub fn model_hash(&self) -> &str {
        &self.model_hash
    }
}

/// Encodes every embedding row. Output order follows the embedding set.
pub fn assign_all(model: &RqModel, emb: &EmbeddingSet) -> Result<SidAssignment> {
    if model.dim() != emb.dim() {
        return Err(Error::DimMismatch {
            expected: model.dim(),
            actual: emb.dim(),
        });
    }
    let sids = (0..emb.count())
        .into_par_iter()
        .map(|i| model.encode(emb.row(i)))
        .collect::<Result<Vec<_>>>()?;
    SidAssignment::new(emb.item_ids().to_vec(), sids, model.hash().to_owned())
}

#[derive(Serialize, Deserialize)]
struct AssignmentFile {
    model_hash: String,
    levels: usize,
    items: Vec<AssignmentEntry>,
}

#[derive(Serialize, Deserialize)]
struct AssignmentEntry {
    item_id: String,
    sid: SidSequence,
}

pub fn save_assignment(path: impl AsRef<Path>, assign: &SidAssignment) -> Result<()> {
    let path = path.as_ref();
    let file = AssignmentFile {
        model_hash: assign.model_hash.clone(),
        levels: assign.levels(),
        items: assign
            .iter()
            .map(|(id, sid)| AssignmentEntry {
                item_id: id.to_owned(),
                sid: sid.clone(),
            })
            .collect(),
    };
    let mut bytes = serde_json::to_vec_pretty(&file)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_assignment(path: impl AsRef<Path>) -> Result<SidAssignment> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let file: AssignmentFile = serde_json::from_slice(&bytes)?;
    let (ids, sids) = file.items.into_iter().map(|e| (e.item_id, e.sid)).unzip();
    let assign = SidAssignment::new(ids, sids, file.model_hash)?;
    if !assign.is_empty() && assign.levels() != file.levels {
        return Err(Error::SidLength {
            expected: file.levels,
            actual: assign.levels(),
        });
    }
    Ok(assign)
}
