use std::cmp::Ordering;

use super::{SequenceModel, TokenId, TokenSpace};
use crate::error::{Error, Result};
use crate::rq::{SidSequence, SidTrie, TrieNodeId};

/// A complete or partial SID with its cumulative log-probability.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub sid: SidSequence,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamOutput {
    /// Best first: descending score, ties in lexicographic token order.
    pub results: Vec<Hypothesis>,
    /// How many of the requested `top_k` could not be filled.
    pub shortfall: usize,
}

struct Partial {
    tokens: Vec<u32>,
    node: Option<TrieNodeId>,
    score: f64,
}

/// Higher score first, then lexicographic tokens.
fn rank(a_tokens: &[u32], a_score: f64, b_tokens: &[u32], b_score: f64) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_tokens.cmp(b_tokens))
}

/// Beam search over exactly `trie.depth()` steps.
///
/// With `constrained`, each hypothesis only expands to children of its trie
/// node, so every result is a catalog SID. Without it, any token of the
/// level's codebook may follow.
pub fn beam_search(
    model: &dyn SequenceModel,
    space: &TokenSpace,
    context: &[TokenId],
    trie: &SidTrie,
    beam_size: usize,
    top_k: usize,
    constrained: bool,
) -> Result<BeamOutput> {
    if top_k == 0 || beam_size < top_k {
        return Err(Error::Config(format!(
            "need beam_size >= top_k >= 1, got beam_size {beam_size}, top_k {top_k}"
        )));
    }
    if trie.leaf_count() == 0 {
        return Err(Error::Empty("SID trie"));
    }
    if trie.depth() != space.levels() || model.vocab_size() != space.vocab_size() {
        return Err(Error::Config("model, token space and trie disagree on shape".into()));
    }
    let mut beam = vec![Partial {
        tokens: Vec::new(),
        node: Some(SidTrie::ROOT),
        score: 0.0,
    }];
    let mut ctx = context.to_vec();
    for level in 0..space.levels() {
        let mut candidates: Vec<(Vec<u32>, f64, Option<TrieNodeId>)> = Vec::new();
        for hyp in &beam {
            ctx.truncate(context.len());
            ctx.extend(hyp.tokens.iter().enumerate().map(|(h, &t)| space.token(h, t)));
            let logp = model.score_next(&ctx);
            let mut push = |t: u32, node: Option<TrieNodeId>| {
                let mut tokens = hyp.tokens.clone();
                tokens.push(t);
                candidates.push((tokens, hyp.score + logp[space.token(level, t) as usize], node));
            };
            if constrained {
                for (t, child) in trie.children(hyp.node.expect("constrained beams stay on the trie")) {
                    push(t, Some(child));
                }
            } else {
                for t in 0..space.sizes()[level] as u32 {
                    push(t, hyp.node.and_then(|n| trie.child(n, t)));
                }
            }
        }
        candidates.sort_by(|a, b| rank(&a.0, a.1, &b.0, b.1));
        candidates.truncate(beam_size);
        beam = candidates
            .into_iter()
            .map(|(tokens, score, node)| Partial { tokens, node, score })
            .collect();
    }
    let results: Vec<Hypothesis> = beam
        .into_iter()
        .take(top_k)
        .map(|p| Hypothesis {
            sid: SidSequence::new(p.tokens),
            score: p.score,
        })
        .collect();
    Ok(BeamOutput {
        shortfall: top_k - results.len(),
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rq::{build_trie, SidAssignment};

    /// Fixed per-position log-probabilities that ignore history except for
    /// its length.
    struct Table(Vec<Vec<f64>>);

    impl SequenceModel for Table {
        fn vocab_size(&self) -> usize {
            self.0[0].len()
        }
        fn score_next(&self, context: &[TokenId]) -> Vec<f64> {
            self.0[context.len() % self.0.len()].clone()
        }
    }

    fn uniform(v: usize, rows: usize) -> Table {
        Table(vec![vec![-(v as f64).ln(); v]; rows])
    }

    fn trie_of(sids: &[&[u32]]) -> SidTrie {
        let assign = SidAssignment::new(
            (0..sids.len()).map(|i| format!("i{i}")).collect(),
            sids.iter().map(|s| SidSequence::new(s.to_vec())).collect(),
            "h".into(),
        )
        .unwrap();
        build_trie(&assign).unwrap()
    }

    #[test]
    fn single_sid_is_forced() {
        let space = TokenSpace::new(&[3, 3]).unwrap();
        let trie = trie_of(&[&[2, 1]]);
        let model = uniform(6, 2);
        let out = beam_search(&model, &space, &[], &trie, 5, 5, true).unwrap();
        assert_eq!(out.results.len(), 1);
        assert_eq!(out.results[0].sid.tokens(), &[2, 1]);
        assert!((out.results[0].score - 2.0 * -(6f64).ln()).abs() < 1e-12);
        assert_eq!(out.shortfall, 4);
    }

    #[test]
    fn ties_break_lexicographically() {
        let space = TokenSpace::new(&[3, 3]).unwrap();
        let trie = trie_of(&[&[2, 0], &[0, 1], &[1, 2], &[0, 0]]);
        let out = beam_search(&uniform(6, 2), &space, &[], &trie, 4, 3, true).unwrap();
        let got: Vec<&[u32]> = out.results.iter().map(|h| h.sid.tokens()).collect();
        assert_eq!(got, vec![&[0, 0][..], &[0, 1], &[1, 2]]);
        assert_eq!(out.shortfall, 0);
    }

    #[test]
    fn constrained_only_yields_catalog_sids() {
        let space = TokenSpace::new(&[3, 3]).unwrap();
        let trie = trie_of(&[&[1, 1], &[2, 2]]);
        // Strongly prefers (0, 0), which is not in the catalog.
        let mut rows = vec![vec![-10.0; 6]; 2];
        rows[0][0] = -0.01;
        rows[1][3] = -0.01;
        let model = Table(rows);
        let c = beam_search(&model, &space, &[], &trie, 2, 2, true).unwrap();
        assert!(c.results.iter().all(|h| trie.contains(&h.sid)));
        let u = beam_search(&model, &space, &[], &trie, 2, 1, false).unwrap();
        assert_eq!(u.results[0].sid.tokens(), &[0, 0]);
        assert!(!trie.contains(&u.results[0].sid));
    }

    #[test]
    fn rejects_bad_sizes() {
        let space = TokenSpace::new(&[3, 3]).unwrap();
        let trie = trie_of(&[&[1, 1]]);
        assert!(beam_search(&uniform(6, 2), &space, &[], &trie, 2, 3, true).is_err());
        assert!(beam_search(&uniform(6, 2), &space, &[], &trie, 2, 0, true).is_err());
        assert!(beam_search(&uniform(7, 2), &space, &[], &trie, 2, 1, true).is_err());
    }
}
