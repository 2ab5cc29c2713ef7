use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{beam_search, SequenceModel, TokenSpace};
use crate::datamodel::SplitDataset;
use crate::error::{Error, Result};
use crate::rq::{SidAssignment, SidTrie};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    #[serde(default = "default_beam")]
    pub beam_size: usize,
    /// Append the validation item to the history before predicting the test item.
    #[serde(default = "yes")]
    pub include_validation: bool,
    /// Restrict generation to catalog SIDs.
    #[serde(default = "yes")]
    pub constrained: bool,
}

fn default_ks() -> Vec<usize> {
    vec![5, 10]
}

fn default_beam() -> usize {
    20
}

fn yes() -> bool {
    true
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: default_ks(),
            beam_size: default_beam(),
            include_validation: true,
            constrained: true,
        }
    }
}

/// 1 if the 1-based `rank` is within `k`.
pub fn hit_at(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r <= k => 1.0,
        _ => 0.0,
    }
}

/// Binary-relevance NDCG with one target: `1 / log2(rank + 1)` within `k`.
///
/// ```
/// use sidforge::recommender::ndcg_at;
///
/// assert_eq!(ndcg_at(Some(1), 5), 1.0);
/// assert_eq!(ndcg_at(Some(3), 5), 0.5);
/// assert_eq!(ndcg_at(Some(7), 5), 0.0);
/// assert_eq!(ndcg_at(None, 10), 0.0);
/// ```
pub fn ndcg_at(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r <= k => 1.0 / ((r + 1) as f64).log2(),
        _ => 0.0,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRank {
    pub user_id: String,
    /// 1-based position of the target's SID among generated SIDs.
    pub rank: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `HR@K` and `NDCG@K` for every configured `K`.
    #[serde(flatten)]
    pub metrics: BTreeMap<String, f64>,
    pub ks: Vec<usize>,
    pub n_users: usize,
    /// Users whose target or history items have no SID.
    pub excluded_users: usize,
    /// Users for whom beam search returned fewer than `max K` SIDs.
    pub beam_failures: usize,
    /// Generated SIDs absent from the catalog (only possible unconstrained).
    pub invalid_generations: usize,
    #[serde(skip)]
    pub ranks: Vec<UserRank>,
}

impl MetricsReport {
    /// Macro-averages hits and NDCG over the given per-user ranks.
    pub fn from_ranks(ks: &[usize], ranks: Vec<UserRank>) -> MetricsReport {
        let n = ranks.len();
        let mut metrics = BTreeMap::new();
        for &k in ks {
            let (mut hr, mut ndcg) = (0.0, 0.0);
            for r in &ranks {
                hr += hit_at(r.rank, k);
                ndcg += ndcg_at(r.rank, k);
            }
            let denom = n.max(1) as f64;
            metrics.insert(format!("HR@{k}"), hr / denom);
            metrics.insert(format!("NDCG@{k}"), ndcg / denom);
        }
        MetricsReport {
            metrics,
            ks: ks.to_vec(),
            n_users: n,
            excluded_users: 0,
            beam_failures: 0,
            invalid_generations: 0,
            ranks,
        }
    }

    pub fn hr(&self, k: usize) -> f64 {
        self.metrics[&format!("HR@{k}")]
    }

    pub fn ndcg(&self, k: usize) -> f64 {
        self.metrics[&format!("NDCG@{k}")]
    }

    /// Columns `metric,K,value,n_users`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,K,value,n_users\n");
        for name in ["HR", "NDCG"] {
            for &k in &self.ks {
                out.push_str(&format!("{name},{k},{},{}\n", self.metrics[&format!("{name}@{k}")], self.n_users));
            }
        }
        out
    }

    /// Columns `user_id,rank`; rank is empty on a miss.
    pub fn ranks_csv(&self) -> String {
        let mut out = String::from("user_id,rank\n");
        for r in &self.ranks {
            let rank = r.rank.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{rank}\n", r.user_id));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<10} {:>8}\n", "metric", "value");
        for (name, v) in &self.metrics {
            out.push_str(&format!("{name:<10} {v:>8.4}\n"));
        }
        out.push_str(&format!(
            "users {} (excluded {}), beam failures {}, invalid generations {}\n",
            self.n_users, self.excluded_users, self.beam_failures, self.invalid_generations
        ));
        out
    }
}

enum Outcome {
    Excluded,
    Ranked {
        rank: Option<usize>,
        shortfall: bool,
        invalid: usize,
    },
}

/// Leave-last-out evaluation: predicts each user's test item from the
/// history and reports HR@K / NDCG@K averaged over users.
///
/// A generated SID is a hit when it equals the target item's SID, even if
/// other items share that SID.
pub fn evaluate(
    model: &dyn SequenceModel,
    space: &TokenSpace,
    split: &SplitDataset,
    assign: &SidAssignment,
    trie: &SidTrie,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    let top_k = *cfg
        .ks
        .iter()
        .max()
        .ok_or_else(|| Error::Config("at least one K is required".into()))?;
    if cfg.ks.contains(&0) {
        return Err(Error::Config("K must be positive".into()));
    }
    if split.users.is_empty() {
        return Err(Error::Empty("evaluation users"));
    }
    let outcomes: Vec<Result<(String, Outcome)>> = split
        .users
        .par_iter()
        .map(|user| {
            let mut history: Vec<&str> = user.train.iter().map(String::as_str).collect();
            if cfg.include_validation {
                history.push(&user.validation);
            }
            let sids: Option<Vec<_>> = history.iter().map(|id| assign.get(id)).collect();
            let (Some(target), Some(sids)) = (assign.get(&user.test), sids) else {
                return Ok((user.user_id.clone(), Outcome::Excluded));
            };
            let context = space.flatten(sids);
            let out = beam_search(model, space, &context, trie, cfg.beam_size, top_k, cfg.constrained)?;
            let rank = out.results.iter().position(|h| &h.sid == target).map(|p| p + 1);
            let invalid = out.results.iter().filter(|h| !trie.contains(&h.sid)).count();
            Ok((
                user.user_id.clone(),
                Outcome::Ranked {
                    rank,
                    shortfall: out.shortfall > 0,
                    invalid,
                },
            ))
        })
        .collect();
    let mut ranks = Vec::new();
    let (mut excluded, mut failures, mut invalid_total) = (0, 0, 0);
    for outcome in outcomes {
        match outcome? {
            (_, Outcome::Excluded) => excluded += 1,
            (user_id, Outcome::Ranked { rank, shortfall, invalid }) => {
                failures += shortfall as usize;
                invalid_total += invalid;
                ranks.push(UserRank { user_id, rank });
            }
        }
    }
    if cfg.constrained {
        assert_eq!(invalid_total, 0, "constrained beam search produced a non-catalog SID");
    }
    let mut report = MetricsReport::from_ranks(&cfg.ks, ranks);
    report.excluded_users = excluded;
    report.beam_failures = failures;
    report.invalid_generations = invalid_total;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::UserSplit;
    use crate::recommender::train_ngram;
    use crate::rq::{build_trie, SidSequence};

    fn ranks(rs: &[Option<usize>]) -> Vec<UserRank> {
        rs.iter()
            .enumerate()
            .map(|(i, &rank)| UserRank {
                user_id: format!("u{i}"),
                rank,
            })
            .collect()
    }

    #[test]
    fn hand_cases() {
        let r = MetricsReport::from_ranks(&[5, 10], ranks(&[Some(1)]));
        assert_eq!((r.hr(5), r.ndcg(5)), (1.0, 1.0));
        let r = MetricsReport::from_ranks(&[5, 10], ranks(&[Some(3)]));
        assert_eq!(r.ndcg(5), 0.5);
        let r = MetricsReport::from_ranks(&[5, 10], ranks(&[Some(7)]));
        assert_eq!((r.hr(5), r.ndcg(5), r.hr(10)), (0.0, 0.0, 1.0));
        assert_eq!(r.ndcg(10), 1.0 / 3.0);
        let r = MetricsReport::from_ranks(&[5, 10], ranks(&[Some(1), None, Some(7), Some(3)]));
        assert_eq!(r.hr(5), 0.5);
        assert_eq!(r.hr(10), 0.75);
    }

    #[test]
    fn json_and_csv_layout() {
        let r = MetricsReport::from_ranks(&[5, 10], ranks(&[Some(2), None]));
        let json: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in ["HR@5", "HR@10", "NDCG@5", "NDCG@10", "n_users"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        let csv = r.to_csv();
        assert!(csv.starts_with("metric,K,value,n_users\nHR,5,0.5,2\n"));
        assert_eq!(csv.lines().count(), 5);
        assert_eq!(r.ranks_csv(), "user_id,rank\nu0,2\nu1,\n");
    }

    #[test]
    fn learned_transition_is_ranked_first() {
        let n = 9u32;
        let assign = SidAssignment::new(
            (0..n).map(|i| format!("i{i}")).collect(),
            (0..n).map(|i| SidSequence::new(vec![i / 3, i % 3])).collect(),
            "h".into(),
        )
        .unwrap();
        let space = TokenSpace::new(&[3, 3]).unwrap();
        let trie = build_trie(&assign).unwrap();
        // Every user walks i0 → i4 → i8 → i0 …
        let users: Vec<UserSplit> = (0..12)
            .map(|u| {
                let walk: Vec<String> = (0..6 + u % 3).map(|s| format!("i{}", (s % 3) * 4)).collect();
                let len = walk.len();
                UserSplit {
                    user_id: format!("u{u:02}"),
                    train: walk[..len - 2].to_vec(),
                    validation: walk[len - 2].clone(),
                    test: walk[len - 1].clone(),
                }
            })
            .collect();
        let mut split = SplitDataset { users, dropped_users: 0 };
        let model = train_ngram(&split, &assign, &space, 3, 0.01).unwrap();
        let cfg = EvalConfig {
            ks: vec![1, 5],
            ..EvalConfig::default()
        };
        let report = evaluate(&model, &space, &split, &assign, &trie, &cfg).unwrap();
        assert_eq!(report.hr(5), 1.0);
        assert_eq!(report.ndcg(5), 1.0);
        assert_eq!(report.beam_failures, 0);
        assert!(report.hr(1) <= report.hr(5));
        split.users[0].test = "missing".into();
        let report = evaluate(&model, &space, &split, &assign, &trie, &cfg).unwrap();
        assert_eq!((report.excluded_users, report.n_users), (1, 11));
    }
}
