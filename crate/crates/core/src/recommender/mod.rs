//! Next-token sequence models over SID tokens, trie-constrained beam search
//! and ranking metrics.
//!
//! Tokens are level-tagged: token `t` at level `h` gets the id
//! `K_0 + … + K_{h-1} + t`, so equal indices at different levels never
//! share an id.

mod beam;
mod eval;
mod ngram;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rq::SidSequence;

pub use beam::{beam_search, BeamOutput, Hypothesis};
pub use eval::{evaluate, hit_at, ndcg_at, EvalConfig, MetricsReport, UserRank};
pub use ngram::{load_baseline, save_baseline, train_ngram, train_popularity, Baseline, NGramModel, PopularityModel};

/// Flat token id across all levels.
pub type TokenId = u32;

/// Mapping between `(level, index)` pairs and flat token ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpace {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl TokenSpace {
    pub fn new(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::Config("token space needs at least one nonempty level".into()));
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &k in sizes {
            offsets.push(acc);
            acc += k;
        }
        if acc > u32::MAX as usize {
            return Err(Error::Config("token space too large".into()));
        }
        Ok(TokenSpace {
            sizes: sizes.to_vec(),
            offsets,
        })
    }

    pub fn levels(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn vocab_size(&self) -> usize {
        self.offsets.last().unwrap() + self.sizes.last().unwrap()
    }

    pub fn token(&self, level: usize, index: u32) -> TokenId {
        (self.offsets[level] + index as usize) as TokenId
    }

    /// `(level, index)` of a flat id.
    pub fn split(&self, id: TokenId) -> (usize, u32) {
        let id = id as usize;
        let level = self.offsets.partition_point(|&o| o <= id) - 1;
        (level, (id - self.offsets[level]) as u32)
    }

    pub fn tokens_of(&self, sid: &SidSequence) -> Vec<TokenId> {
        sid.tokens()
            .iter()
            .enumerate()
            .map(|(h, &t)| self.token(h, t))
            .collect()
    }

    /// Flattens a sequence of SIDs into level-tagged tokens.
    pub fn flatten<'a>(&self, sids: impl IntoIterator<Item = &'a SidSequence>) -> Vec<TokenId> {
        sids.into_iter().flat_map(|s| self.tokens_of(s)).collect()
    }
}

/// A next-token model over a [`TokenSpace`] vocabulary.
///
/// `score_next` returns log-probabilities for every token id; they must
/// exponentiate to a distribution summing to 1, including for an empty
/// context. Scoring must be a pure function of the context.
pub trait SequenceModel: Sync {
    fn vocab_size(&self) -> usize;
    fn score_next(&self, context: &[TokenId]) -> Vec<f64>;
}
