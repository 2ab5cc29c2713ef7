use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One catalog item, including cached enrichment text.
///
/// `visual_description` is the cached image caption and `interests` the
/// cached interest tags; both are optional because a plain text-only
/// catalog has neither.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: String,
    pub title: String,
    pub description: String,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual_description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interests: Option<Vec<String>>,
}

impl ItemRecord {
    /// The unified text fed to the embedding model.
    ///
    /// Segments appear in a fixed order, one per line: title, interest tags,
    /// description, visual description. Absent segments are omitted.
    ///
    /// ```
    /// use sidforge::datamodel::ItemRecord;
    ///
    /// let item = ItemRecord {
    ///     item_id: "B01".into(),
    ///     title: "Soccer Ball".into(),
    ///     description: "Rubber.".into(),
    ///     category: "Soccer".into(),
    ///     visual_description: Some("Yellow ball.".into()),
    ///     interests: Some(vec!["youth sports".into(), "parents".into()]),
    /// };
    /// assert_eq!(
    ///     item.unified_text(),
    ///     "Title: Soccer Ball\n[INTERESTS] youth sports; parents\nDescription: Rubber.\nVisual: Yellow ball."
    /// );
    /// ```
    pub fn unified_text(&self) -> String {
        let mut parts = vec![format!("Title: {}", self.title)];
        if let Some(tags) = self.interests.as_ref().filter(|t| !t.is_empty()) {
            parts.push(format!("[INTERESTS] {}", tags.join("; ")));
        }
        parts.push(format!("Description: {}", self.description));
        if let Some(visual) = &self.visual_description {
            parts.push(format!("Visual: {visual}"));
        }
        parts.join("\n")
    }
}

/// Ordered item collection with an id index.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ItemCatalog {
    items: Vec<ItemRecord>,
    index: HashMap<String, usize>,
}

impl ItemCatalog {
    pub fn new(items: Vec<ItemRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(items.len());
        for (pos, item) in items.iter().enumerate() {
            if item.item_id.is_empty() {
                return Err(Error::EmptyItemId(pos + 1));
            }
            if index.insert(item.item_id.clone(), pos).is_some() {
                return Err(Error::DuplicateItem(item.item_id.clone()));
            }
        }
        Ok(ItemCatalog { items, index })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, item_id: &str) -> Option<&ItemRecord> {
        self.index.get(item_id).map(|&pos| &self.items[pos])
    }

    pub fn position(&self, item_id: &str) -> Option<usize> {
        self.index.get(item_id).copied()
    }

    pub fn items(&self) -> &[ItemRecord] {
        &self.items
    }

    pub fn iter(&self) -> impl Iterator<Item = &ItemRecord> {
        self.items.iter()
    }

    /// item_id → category, in catalog order.
    pub fn labels(&self) -> Vec<(String, String)> {
        self.items
            .iter()
            .map(|item| (item.item_id.clone(), item.category.clone()))
            .collect()
    }
}

/// Reads a line-delimited JSON item file. Blank lines are skipped.
pub fn load_items(path: impl AsRef<Path>) -> Result<ItemCatalog> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    let mut seen = HashMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item: ItemRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        if item.item_id.is_empty() {
            return Err(Error::EmptyItemId(lineno + 1));
        }
        if seen.insert(item.item_id.clone(), lineno + 1).is_some() {
            return Err(Error::DuplicateItem(item.item_id));
        }
        items.push(item);
    }
    ItemCatalog::new(items)
}

pub fn save_items(path: impl AsRef<Path>, catalog: &ItemCatalog) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in catalog.iter() {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
