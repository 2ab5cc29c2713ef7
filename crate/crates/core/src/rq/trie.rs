use std::collections::BTreeMap;

use super::{SidAssignment, SidSequence};
use crate::error::{Error, Result};

pub type TrieNodeId = usize;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct Node {
    children: BTreeMap<u32, TrieNodeId>,
    /// Sorted ids of items whose full SID ends here (leaves only).
    items: Vec<String>,
}

/// Prefix tree over every distinct SID of a catalog.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SidTrie {
    nodes: Vec<Node>,
    depth: usize,
    leaves: Vec<TrieNodeId>,
}

impl SidTrie {
    pub const ROOT: TrieNodeId = 0;

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Children of `node` in ascending token order.
    pub fn children(&self, node: TrieNodeId) -> impl Iterator<Item = (u32, TrieNodeId)> + '_ {
        self.nodes[node].children.iter().map(|(&t, &n)| (t, n))
    }

    pub fn child(&self, node: TrieNodeId, token: u32) -> Option<TrieNodeId> {
        self.nodes[node].children.get(&token).copied()
    }

    /// Item ids at a full-depth node; empty for interior nodes.
    pub fn items_at(&self, node: TrieNodeId) -> &[String] {
        &self.nodes[node].items
    }

    /// Walks `tokens` from the root.
    pub fn find(&self, tokens: &[u32]) -> Option<TrieNodeId> {
        tokens
            .iter()
            .try_fold(Self::ROOT, |node, &t| self.child(node, t))
    }

    pub fn contains(&self, sid: &SidSequence) -> bool {
        sid.len() == self.depth && self.find(sid.tokens()).is_some()
    }

    pub fn items_for(&self, sid: &SidSequence) -> &[String] {
        match self.find(sid.tokens()) {
            Some(node) if sid.len() == self.depth => self.items_at(node),
            _ => &[],
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    /// All distinct SIDs in lexicographic token order.
    pub fn sids(&self) -> Vec<SidSequence> {
        let mut out = Vec::with_capacity(self.leaves.len());
        let mut path = Vec::with_capacity(self.depth);
        self.collect(Self::ROOT, &mut path, &mut out);
        out
    }

    fn collect(&self, node: TrieNodeId, path: &mut Vec<u32>, out: &mut Vec<SidSequence>) {
        if path.len() == self.depth {
            out.push(SidSequence::new(path.clone()));
            return;
        }
        for (t, child) in self.children(node) {
            path.push(t);
            self.collect(child, path, out);
            path.pop();
        }
    }
}

/// Builds the trie of all SIDs in `assign`.
pub fn build_trie(assign: &SidAssignment) -> Result<SidTrie> {
    if assign.is_empty() {
        return Err(Error::Empty("SID assignment"));
    }
    let mut trie = SidTrie {
        nodes: vec![Node::default()],
        depth: assign.levels(),
        leaves: Vec::new(),
    };
    for (item, sid) in assign.iter() {
        let mut node = SidTrie::ROOT;
        for &t in sid.tokens() {
            node = match trie.nodes[node].children.get(&t) {
                Some(&next) => next,
                None => {
                    trie.nodes.push(Node::default());
                    let next = trie.nodes.len() - 1;
                    trie.nodes[node].children.insert(t, next);
                    next
                }
            };
        }
        if trie.nodes[node].items.is_empty() {
            trie.leaves.push(node);
        }
        trie.nodes[node].items.push(item.to_owned());
    }
    for &leaf in &trie.leaves {
        trie.nodes[leaf].items.sort();
    }
    Ok(trie)
}
