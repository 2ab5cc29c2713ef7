use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
}

/// A flat user–item interaction log.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InteractionLog {
    pub events: Vec<Interaction>,
}

impl InteractionLog {
    pub fn new(events: Vec<Interaction>) -> Self {
        InteractionLog { events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Per-user item sequences ordered by `(timestamp, item_id)`.
    pub fn user_sequences(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut by_user: BTreeMap<&str, Vec<(i64, &str)>> = BTreeMap::new();
        for ev in &self.events {
            by_user
                .entry(ev.user_id.as_str())
                .or_default()
                .push((ev.timestamp, ev.item_id.as_str()));
        }
        by_user
            .into_iter()
            .map(|(user, mut evs)| {
                evs.sort_unstable();
                (user, evs.into_iter().map(|(_, item)| item).collect())
            })
            .collect()
    }

    /// Events sorted by `(user_id, timestamp, item_id)`.
    pub fn canonical(mut self) -> Self {
        self.events.sort_unstable_by(|a, b| {
            (&a.user_id, a.timestamp, &a.item_id).cmp(&(&b.user_id, b.timestamp, &b.item_id))
        });
        self
    }
}

/// Reads tab-separated `user_id item_id timestamp` lines (no header).
pub fn load_interactions(path: impl AsRef<Path>) -> Result<InteractionLog> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut events = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: &str| Error::MalformedLine {
            line: lineno + 1,
            message: message.to_owned(),
        };
        let mut cols = line.split('\t');
        let (Some(user), Some(item), Some(ts), None) =
            (cols.next(), cols.next(), cols.next(), cols.next())
        else {
            return Err(malformed("expected 3 tab-separated columns"));
        };
        if user.is_empty() || item.is_empty() {
            return Err(malformed("empty user or item id"));
        }
        let timestamp = ts
            .trim()
            .parse::<i64>()
            .map_err(|_| malformed("timestamp is not an integer"))?;
        events.push(Interaction {
            user_id: user.to_owned(),
            item_id: item.to_owned(),
            timestamp,
        });
    }
    Ok(InteractionLog { events })
}

pub fn save_interactions(path: impl AsRef<Path>, log: &InteractionLog) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for ev in &log.events {
        writeln!(out, "{}\t{}\t{}", ev.user_id, ev.item_id, ev.timestamp)
            .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Keeps the maximal sub-log in which every user and every item has at
/// least `k` interactions.
///
/// Removal cascades until a fixed point. The result is returned in
/// canonical order, so it does not depend on the input event order.
pub fn k_core_filter(log: &InteractionLog, k: usize) -> InteractionLog {
    let mut user_index: HashMap<&str, usize> = HashMap::new();
    let mut item_index: HashMap<&str, usize> = HashMap::new();
    let mut ends = Vec::with_capacity(log.events.len());
    for ev in &log.events {
        let n = user_index.len();
        let u = *user_index.entry(ev.user_id.as_str()).or_insert(n);
        let n = item_index.len();
        let i = *item_index.entry(ev.item_id.as_str()).or_insert(n);
        ends.push((u, i));
    }
    let n_users = user_index.len();
    // Users occupy node ids [0, n_users), items follow.
    let n_nodes = n_users + item_index.len();
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
    for (e, &(u, i)) in ends.iter().enumerate() {
        incident[u].push(e);
        incident[n_users + i].push(e);
    }
    let mut degree: Vec<usize> = incident.iter().map(Vec::len).collect();
    let mut alive = vec![true; ends.len()];
    let mut removed = vec![false; n_nodes];
    let mut queue: Vec<usize> = (0..n_nodes).filter(|&v| degree[v] < k).collect();
    while let Some(node) = queue.pop() {
        if removed[node] {
            continue;
        }
        removed[node] = true;
        for &e in &incident[node] {
            if !alive[e] {
                continue;
            }
            alive[e] = false;
            let (u, i) = ends[e];
            let other = if node == u { n_users + i } else { u };
            degree[node] -= 1;
            degree[other] -= 1;
            if degree[other] < k && !removed[other] {
                queue.push(other);
            }
        }
    }
    let events = log
        .events
        .iter()
        .zip(&alive)
        .filter(|(_, &keep)| keep)
        .map(|(ev, _)| ev.clone())
        .collect();
    InteractionLog { events }.canonical()
}

/// One user's leave-last-out split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSplit {
    pub user_id: String,
    pub train: Vec<String>,
    pub validation: String,
    pub test: String,
}

impl UserSplit {
    /// `train ++ [validation] ++ [test]`.
    pub fn full_sequence(&self) -> Vec<&str> {
        self.train
            .iter()
            .map(String::as_str)
            .chain([self.validation.as_str(), self.test.as_str()])
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitDataset {
    /// Users in lexicographic id order.
    pub users: Vec<UserSplit>,
    /// Users dropped for having fewer than three interactions.
    pub dropped_users: usize,
}

/// Last item is the test target, second-to-last the validation target.
pub fn leave_last_out_split(log: &InteractionLog) -> SplitDataset {
    let mut split = SplitDataset::default();
    for (user, seq) in log.user_sequences() {
        if seq.len() < 3 {
            split.dropped_users += 1;
            continue;
        }
        let n = seq.len();
        split.users.push(UserSplit {
            user_id: user.to_owned(),
            train: seq[..n - 2].iter().map(|s| (*s).to_owned()).collect(),
            validation: seq[n - 2].to_owned(),
            test: seq[n - 1].to_owned(),
        });
    }
    split
}
