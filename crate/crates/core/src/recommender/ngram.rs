//! Count-based baselines: a back-off n-gram model and an item-popularity
//! model, both with additive smoothing.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SequenceModel, TokenId, TokenSpace};
use crate::datamodel::SplitDataset;
use crate::error::{Error, Result};
use crate::rq::{SidAssignment, SidSequence};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct ContextCounts {
    total: u64,
    next: HashMap<TokenId, u64>,
}

/// Next-token counts keyed by context.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "Vec<TableEntry>", from = "Vec<TableEntry>")]
struct CountTable(HashMap<Vec<TokenId>, ContextCounts>);

#[derive(Serialize, Deserialize)]
struct TableEntry {
    context: Vec<TokenId>,
    /// `(token, count)` in token order.
    next: Vec<(TokenId, u64)>,
}

impl From<CountTable> for Vec<TableEntry> {
    fn from(t: CountTable) -> Self {
        let mut entries: Vec<TableEntry> = t
            .0
            .into_iter()
            .map(|(context, c)| TableEntry {
                context,
                next: {
                    let mut next: Vec<_> = c.next.into_iter().collect();
                    next.sort_unstable();
                    next
                },
            })
            .collect();
        entries.sort_by(|a, b| (a.context.len(), &a.context).cmp(&(b.context.len(), &b.context)));
        entries
    }
}

impl From<Vec<TableEntry>> for CountTable {
    fn from(entries: Vec<TableEntry>) -> Self {
        CountTable(
            entries
                .into_iter()
                .map(|e| {
                    let total = e.next.iter().map(|&(_, c)| c).sum();
                    (
                        e.context,
                        ContextCounts {
                            total,
                            next: e.next.into_iter().collect(),
                        },
                    )
                })
                .collect(),
        )
    }
}

impl CountTable {
    fn add(&mut self, context: &[TokenId], next: TokenId) {
        let c = self.0.entry(context.to_vec()).or_default();
        c.total += 1;
        *c.next.entry(next).or_default() += 1;
    }

    /// Smoothed log-probabilities `(c + α) / (total + α V)`.
    fn log_probs(&self, context: &[TokenId], alpha: f64, vocab: usize) -> Vec<f64> {
        let (total, next) = match self.0.get(context) {
            Some(c) => (c.total as f64, Some(&c.next)),
            None => (0.0, None),
        };
        let denom = (total + alpha * vocab as f64).ln();
        let base = alpha.ln() - denom;
        let mut out = vec![base; vocab];
        if let Some(next) = next {
            for (&t, &c) in next {
                out[t as usize] = (c as f64 + alpha).ln() - denom;
            }
        }
        out
    }
}

fn train_sequences(split: &SplitDataset, assign: &SidAssignment) -> Result<Vec<Vec<SidSequence>>> {
    let seqs: Vec<Vec<SidSequence>> = split
        .users
        .iter()
        .map(|u| {
            u.train
                .iter()
                .map(|id| assign.get(id).cloned().ok_or_else(|| Error::UnknownItem(id.clone())))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    if seqs.iter().all(|s| s.is_empty()) {
        return Err(Error::Empty("training sequences"));
    }
    Ok(seqs)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("smoothing alpha must be positive, got {alpha}")))
    }
}

/// Back-off n-gram model over flattened SID tokens.
///
/// Scoring uses the longest suffix of the context (at most `order − 1`
/// tokens) that was observed in training, with additive smoothing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NGramModel {
    space: TokenSpace,
    order: usize,
    alpha: f64,
    table: CountTable,
}

pub fn train_ngram(
    split: &SplitDataset,
    assign: &SidAssignment,
    space: &TokenSpace,
    order: usize,
    alpha: f64,
) -> Result<NGramModel> {
    if order == 0 {
        return Err(Error::Config("n-gram order must be at least 1".into()));
    }
    check_alpha(alpha)?;
    let mut table = CountTable::default();
    for seq in train_sequences(split, assign)? {
        let tokens = space.flatten(&seq);
        for i in 0..tokens.len() {
            for len in 0..order.min(i + 1) {
                table.add(&tokens[i - len..i], tokens[i]);
            }
        }
    }
    Ok(NGramModel {
        space: space.clone(),
        order,
        alpha,
        table,
    })
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn space(&self) -> &TokenSpace {
        &self.space
    }

    /// Length of the context suffix used to score the next token.
    pub fn backoff_length(&self, context: &[TokenId]) -> usize {
        let longest = context.len().min(self.order - 1);
        (0..=longest)
            .rev()
            .find(|&l| self.table.0.contains_key(&context[context.len() - l..]))
            .unwrap_or(0)
    }
}

impl SequenceModel for NGramModel {
    fn vocab_size(&self) -> usize {
        self.space.vocab_size()
    }

    fn score_next(&self, context: &[TokenId]) -> Vec<f64> {
        let l = self.backoff_length(context);
        self.table
            .log_probs(&context[context.len() - l..], self.alpha, self.vocab_size())
    }
}

/// Ranks items by training frequency, ignoring history: each level's token
/// is conditioned only on the earlier tokens of the same item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopularityModel {
    space: TokenSpace,
    alpha: f64,
    table: CountTable,
}

pub fn train_popularity(
    split: &SplitDataset,
    assign: &SidAssignment,
    space: &TokenSpace,
    alpha: f64,
) -> Result<PopularityModel> {
    check_alpha(alpha)?;
    let mut table = CountTable::default();
    for seq in train_sequences(split, assign)? {
        for sid in &seq {
            let tokens = space.tokens_of(sid);
            for h in 0..tokens.len() {
                table.add(&tokens[..h], tokens[h]);
            }
        }
    }
    Ok(PopularityModel {
        space: space.clone(),
        alpha,
        table,
    })
}

impl SequenceModel for PopularityModel {
    fn vocab_size(&self) -> usize {
        self.space.vocab_size()
    }

    fn score_next(&self, context: &[TokenId]) -> Vec<f64> {
        let h = context.len() % self.space.levels();
        self.table
            .log_probs(&context[context.len() - h..], self.alpha, self.vocab_size())
    }
}

/// A persisted baseline of either kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Baseline {
    Ngram(NGramModel),
    Popularity(PopularityModel),
}

impl SequenceModel for Baseline {
    fn vocab_size(&self) -> usize {
        match self {
            Baseline::Ngram(m) => m.vocab_size(),
            Baseline::Popularity(m) => m.vocab_size(),
        }
    }

    fn score_next(&self, context: &[TokenId]) -> Vec<f64> {
        match self {
            Baseline::Ngram(m) => m.score_next(context),
            Baseline::Popularity(m) => m.score_next(context),
        }
    }
}

impl Baseline {
    pub fn space(&self) -> &TokenSpace {
        match self {
            Baseline::Ngram(m) => &m.space,
            Baseline::Popularity(m) => &m.space,
        }
    }
}

pub fn save_baseline(path: impl AsRef<Path>, model: &Baseline) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string(model)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_baseline(path: impl AsRef<Path>) -> Result<Baseline> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::UserSplit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assign_of(n: u32) -> SidAssignment {
        SidAssignment::new(
            (0..n).map(|i| format!("i{i}")).collect(),
            (0..n).map(|i| SidSequence::new(vec![i % 4, i / 4])).collect(),
            "h".into(),
        )
        .unwrap()
    }

    fn split_of(trains: &[&[u32]]) -> SplitDataset {
        SplitDataset {
            users: trains
                .iter()
                .enumerate()
                .map(|(u, t)| UserSplit {
                    user_id: format!("u{u}"),
                    train: t.iter().map(|i| format!("i{i}")).collect(),
                    validation: "i0".into(),
                    test: "i0".into(),
                })
                .collect(),
            dropped_users: 0,
        }
    }

    fn argmax(v: &[f64]) -> usize {
        (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
    }

    #[test]
    fn repeated_transition_dominates() {
        let space = TokenSpace::new(&[4, 4]).unwrap();
        let assign = assign_of(16);
        // A = i1 (1,0), B = i6 (2,1).
        let split = split_of(&[&[1, 6, 1, 6, 1, 6], &[1, 6]]);
        let m = train_ngram(&split, &assign, &space, 3, 0.1).unwrap();
        let ctx = space.tokens_of(&SidSequence::new(vec![1, 0]));
        assert_eq!(argmax(&m.score_next(&ctx)) as u32, space.token(0, 2));
    }

    #[test]
    fn distributions_normalize() {
        let space = TokenSpace::new(&[4, 4]).unwrap();
        let assign = assign_of(16);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trains: Vec<Vec<u32>> = (0..30)
            .map(|_| (0..rng.random_range(1..10)).map(|_| rng.random_range(0..16)).collect())
            .collect();
        let refs: Vec<&[u32]> = trains.iter().map(Vec::as_slice).collect();
        let split = split_of(&refs);
        let ngram = train_ngram(&split, &assign, &space, 4, 0.5).unwrap();
        let pop = train_popularity(&split, &assign, &space, 0.5).unwrap();
        for _ in 0..100 {
            let ctx: Vec<TokenId> = (0..rng.random_range(0..9)).map(|_| rng.random_range(0..8)).collect();
            for lp in [ngram.score_next(&ctx), pop.score_next(&ctx)] {
                let total: f64 = lp.iter().map(|l| l.exp()).sum();
                assert!((total - 1.0).abs() < 1e-6);
                assert!(lp.iter().all(|l| l.is_finite()));
            }
        }
    }

    #[test]
    fn larger_alpha_flattens() {
        let space = TokenSpace::new(&[4, 4]).unwrap();
        let assign = assign_of(16);
        let split = split_of(&[&[1, 6, 1, 6, 3, 9, 12]]);
        let ctx = space.tokens_of(&SidSequence::new(vec![1, 0]));
        let gaps: Vec<f64> = [0.01, 1.0, 100.0]
            .iter()
            .map(|&a| {
                let p: Vec<f64> = train_ngram(&split, &assign, &space, 3, a)
                    .unwrap()
                    .score_next(&ctx)
                    .iter()
                    .map(|l| l.exp())
                    .collect();
                p.iter().cloned().fold(f64::MIN, f64::max) - p.iter().cloned().fold(f64::MAX, f64::min)
            })
            .collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    }

    #[test]
    fn backs_off_to_observed_context() {
        let space = TokenSpace::new(&[4, 4]).unwrap();
        let assign = assign_of(16);
        let split = split_of(&[&[1, 6]]);
        let m = train_ngram(&split, &assign, &space, 3, 1.0).unwrap();
        assert_eq!(m.backoff_length(&[]), 0);
        assert_eq!(m.backoff_length(&[1, 4]), 2);
        assert_eq!(m.backoff_length(&[7, 4]), 1);
        assert_eq!(m.backoff_length(&[7, 7]), 0);
    }

    #[test]
    fn rejects_bad_parameters_and_empty_data() {
        let space = TokenSpace::new(&[4, 4]).unwrap();
        let assign = assign_of(16);
        let split = split_of(&[&[1]]);
        assert!(train_ngram(&split, &assign, &space, 0, 1.0).is_err());
        assert!(train_ngram(&split, &assign, &space, 2, 0.0).is_err());
        assert!(matches!(
            train_ngram(&split_of(&[&[]]), &assign, &space, 2, 1.0),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn baseline_json_round_trip() {
        let space = TokenSpace::new(&[4, 4]).unwrap();
        let assign = assign_of(16);
        let split = split_of(&[&[1, 6, 3, 9], &[2, 2]]);
        let dir = tempfile::tempdir().unwrap();
        for m in [
            Baseline::Ngram(train_ngram(&split, &assign, &space, 3, 0.5).unwrap()),
            Baseline::Popularity(train_popularity(&split, &assign, &space, 0.5).unwrap()),
        ] {
            let path = dir.path().join("m.json");
            save_baseline(&path, &m).unwrap();
            let back = load_baseline(&path).unwrap();
            assert_eq!(back, m);
            let first = std::fs::read(&path).unwrap();
            save_baseline(&path, &back).unwrap();
            assert_eq!(std::fs::read(&path).unwrap(), first);
        }
    }
}
