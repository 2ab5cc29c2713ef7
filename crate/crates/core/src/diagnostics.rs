//! Quality diagnostics for a SID assignment.
//!
//! Collision rate, unique ratio, codebook utilization and prefix entropy
//! look only at the discrete codes. The reconstruction curve and the
//! category probe also need the codebooks.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datamodel::EmbeddingSet;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::rq::{RqModel, SidAssignment, SidSequence};

fn sid_counts(assign: &SidAssignment) -> HashMap<&SidSequence, usize> {
    let mut counts = HashMap::new();
    for sid in assign.sids() {
        *counts.entry(sid).or_insert(0) += 1;
    }
    counts
}

fn require_items(assign: &SidAssignment) -> Result<()> {
    if assign.is_empty() {
        Err(Error::Empty("SID assignment"))
    } else {
        Ok(())
    }
}

/// Fraction of items whose full SID is shared with at least one other item.
pub fn collision_rate(assign: &SidAssignment) -> Result<f64> {
    require_items(assign)?;
    let counts = sid_counts(assign);
    let collided = assign.sids().iter().filter(|s| counts[s] > 1).count();
    Ok(collided as f64 / assign.len() as f64)
}

/// Fraction of items whose full SID is theirs alone.
pub fn unique_ratio(assign: &SidAssignment) -> Result<f64> {
    require_items(assign)?;
    let counts = sid_counts(assign);
    let unique = assign.sids().iter().filter(|s| counts[s] == 1).count();
    Ok(unique as f64 / assign.len() as f64)
}

/// Distinct tokens used at each level.
pub fn active_codes(assign: &SidAssignment, model: &RqModel) -> Result<Vec<usize>> {
    let sizes = model.sizes();
    let mut used: Vec<Vec<bool>> = sizes.iter().map(|&k| vec![false; k]).collect();
    for sid in assign.sids() {
        sid.validate(&sizes)?;
        for (level, &t) in sid.tokens().iter().enumerate() {
            used[level][t as usize] = true;
        }
    }
    Ok(used
        .iter()
        .map(|u| u.iter().filter(|&&b| b).count())
        .collect())
}

/// Mean over levels of the fraction of codewords used by at least one item.
///
/// Sizes are the model's fitted codebook sizes.
pub fn codebook_utilization(assign: &SidAssignment, model: &RqModel) -> Result<f64> {
    let active = active_codes(assign, model)?;
    let sizes = model.sizes();
    let sum: f64 = active
        .iter()
        .zip(&sizes)
        .map(|(&a, &k)| a as f64 / k as f64)
        .sum();
    Ok(sum / sizes.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefixEntropy {
    /// Base-2 entropy of the length-`p` prefix distribution, `p = 1..=H`.
    pub per_prefix: Vec<f64>,
    /// Mean of `per_prefix`.
    pub mean: f64,
}

fn entropy_bits<'a>(counts: impl Iterator<Item = &'a usize>, total: usize) -> f64 {
    let n = total as f64;
    counts
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0)
}

/// Shannon entropy (bits) of SID prefixes of every length, and their mean.
pub fn prefix_entropy(assign: &SidAssignment) -> Result<PrefixEntropy> {
    require_items(assign)?;
    let levels = assign.levels();
    let mut per_prefix = Vec::with_capacity(levels);
    for p in 1..=levels {
        let mut counts: HashMap<&[u32], usize> = HashMap::new();
        for sid in assign.sids() {
            *counts.entry(&sid.tokens()[..p]).or_insert(0) += 1;
        }
        // Sum in a fixed order so the result is reproducible bit for bit.
        let mut values: Vec<usize> = counts.into_values().collect();
        values.sort_unstable();
        per_prefix.push(entropy_bits(values.iter(), assign.len()));
    }
    let mean = per_prefix.iter().sum::<f64>() / levels as f64;
    Ok(PrefixEntropy { per_prefix, mean })
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean cosine similarity between embeddings and their depth-`h` reconstructions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionCurve {
    /// `sim[h - 1]` is Sim(h).
    pub sim: Vec<f64>,
    /// Per depth, items whose reconstruction had zero norm (scored 0).
    pub zero_reconstructions: Vec<usize>,
    /// Items skipped because their own embedding has zero norm.
    pub excluded_zero_norm: usize,
}

impl ReconstructionCurve {
    pub fn at(&self, depth: usize) -> f64 {
        self.sim[depth - 1]
    }
}

/// Sim(h) for `h = 1..=h_max`, using prefix sums of one encoding per item.
pub fn reconstruction_curve(
    model: &RqModel,
    emb: &EmbeddingSet,
    h_max: usize,
) -> Result<ReconstructionCurve> {
    if h_max == 0 || h_max > model.levels() {
        return Err(Error::Config(format!(
            "h_max must be in 1..={}, got {h_max}",
            model.levels()
        )));
    }
    if emb.dim() != model.dim() {
        return Err(Error::DimMismatch {
            expected: model.dim(),
            actual: emb.dim(),
        });
    }
    let mut sums = vec![0.0; h_max];
    let mut zero = vec![0; h_max];
    let mut excluded = 0;
    let mut counted = 0usize;
    for row in emb.rows() {
        let original: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
        if original.iter().all(|&v| v == 0.0) {
            excluded += 1;
            continue;
        }
        counted += 1;
        let sid = model.encode(row)?;
        let mut recon = vec![0.0; model.dim()];
        for h in 0..h_max {
            let cb = &model.codebooks()[h];
            for (r, &c) in recon.iter_mut().zip(cb.centroid(sid.tokens()[h] as usize)) {
                *r += f64::from(c);
            }
            match cosine(&original, &recon) {
                Some(s) => sums[h] += s,
                None => zero[h] += 1,
            }
        }
    }
    if counted == 0 {
        return Err(Error::Empty("embeddings with nonzero norm"));
    }
    Ok(ReconstructionCurve {
        sim: sums.iter().map(|s| s / counted as f64).collect(),
        zero_reconstructions: zero,
        excluded_zero_norm: excluded,
    })
}

/// Probe hyperparameters: full-batch gradient descent on softmax regression.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub steps: usize,
    pub step_size: f64,
    pub l2: f64,
    pub train_fraction: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            steps: 500,
            step_size: 0.1,
            l2: 1e-4,
            train_fraction: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub num_categories: usize,
    pub train_size: usize,
    pub test_size: usize,
}

/// Trains a linear category probe on SID reconstructions and reports
/// held-out accuracy.
///
/// `labels` maps item ids to categories; items without a label are ignored.
pub fn semantic_probe(
    assign: &SidAssignment,
    model: &RqModel,
    labels: &HashMap<String, String>,
    split_seed: u64,
) -> Result<ProbeResult> {
    semantic_probe_with(assign, model, labels, split_seed, &ProbeConfig::default())
}

pub fn semantic_probe_with(
    assign: &SidAssignment,
    model: &RqModel,
    labels: &HashMap<String, String>,
    split_seed: u64,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    let mut by_category: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (item, _)) in assign.iter().enumerate() {
        if let Some(cat) = labels.get(item) {
            by_category.entry(cat.as_str()).or_default().push(i);
        }
    }
    if by_category.len() < 2 {
        return Err(Error::Config("probe needs at least two categories".into()));
    }
    if let Some((cat, _)) = by_category.iter().find(|(_, items)| items.len() < 10) {
        return Err(Error::Config(format!("category {cat:?} has fewer than 10 items")));
    }

    let mut rng = rng::stream(split_seed, Purpose::ProbeSplit, 0);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, items) in by_category.values().enumerate() {
        let mut items = items.clone();
        items.shuffle(&mut rng);
        let n_train = ((items.len() as f64 * cfg.train_fraction).round() as usize).min(items.len() - 1);
        train.extend(items[..n_train].iter().map(|&i| (i, class)));
        test.extend(items[n_train..].iter().map(|&i| (i, class)));
    }
    let n_classes = by_category.len();
    for (class, cat) in by_category.keys().enumerate() {
        if !train.iter().any(|&(_, c)| c == class) {
            return Err(Error::ProbeMissingCategory((*cat).to_owned()));
        }
    }

    let dim = model.dim();
    let features = |idx: &[(usize, usize)]| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(idx.len() * dim);
        for &(i, _) in idx {
            out.extend(model.decode(&assign.sids()[i], None)?);
        }
        Ok(out)
    };
    let mut x_train = features(&train)?;
    let mut x_test = features(&test)?;

    // Standardize with training statistics.
    let n = train.len() as f64;
    let mut mean = vec![0.0; dim];
    for row in x_train.chunks_exact(dim) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / n);
    }
    let mut std = vec![0.0; dim];
    for row in x_train.chunks_exact(dim) {
        std.iter_mut()
            .zip(row.iter().zip(&mean))
            .for_each(|(s, (v, m))| *s += (v - m) * (v - m) / n);
    }
    std.iter_mut().for_each(|s| *s = if *s > 0.0 { s.sqrt() } else { 1.0 });
    for x in [&mut x_train, &mut x_test] {
        for row in x.chunks_exact_mut(dim) {
            for ((v, m), s) in row.iter_mut().zip(&mean).zip(&std) {
                *v = (*v - m) / s;
            }
        }
    }

    let y_train: Vec<usize> = train.iter().map(|&(_, c)| c).collect();
    let (weights, bias) = fit_softmax(&x_train, &y_train, dim, n_classes, cfg);

    let correct = x_test
        .chunks_exact(dim)
        .zip(&test)
        .filter(|(row, &(_, class))| argmax(&logits(row, &weights, &bias, dim)) == class)
        .count();
    Ok(ProbeResult {
        accuracy: correct as f64 / test.len() as f64,
        num_categories: n_classes,
        train_size: train.len(),
        test_size: test.len(),
    })
}

fn logits(row: &[f64], weights: &[f64], bias: &[f64], dim: usize) -> Vec<f64> {
    weights
        .chunks_exact(dim)
        .zip(bias)
        .map(|(w, b)| b + w.iter().zip(row).map(|(a, x)| a * x).sum::<f64>())
        .collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    v.iter_mut().for_each(|x| *x /= total);
}

fn fit_softmax(
    x: &[f64],
    y: &[usize],
    dim: usize,
    n_classes: usize,
    cfg: &ProbeConfig,
) -> (Vec<f64>, Vec<f64>) {
    let n = y.len() as f64;
    let mut weights = vec![0.0; n_classes * dim];
    let mut bias = vec![0.0; n_classes];
    let mut grad_w = vec![0.0; n_classes * dim];
    let mut grad_b = vec![0.0; n_classes];
    for _ in 0..cfg.steps {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        grad_b.iter_mut().for_each(|g| *g = 0.0);
        for (row, &label) in x.chunks_exact(dim).zip(y) {
            let mut p = logits(row, &weights, &bias, dim);
            softmax_in_place(&mut p);
            p[label] -= 1.0;
            for (c, &err) in p.iter().enumerate() {
                grad_b[c] += err / n;
                for (g, v) in grad_w[c * dim..(c + 1) * dim].iter_mut().zip(row) {
                    *g += err * v / n;
                }
            }
        }
        for (w, g) in weights.iter_mut().zip(&grad_w) {
            *w -= cfg.step_size * (g + cfg.l2 * *w);
        }
        for (b, g) in bias.iter_mut().zip(&grad_b) {
            *b -= cfg.step_size * g;
        }
    }
    (weights, bias)
}

/// Everything `diagnose` computes, in one serializable record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub items: usize,
    pub distinct_sids: usize,
    pub collision_rate: f64,
    pub unique_ratio: f64,
    pub utilization: f64,
    pub active_codes: Vec<usize>,
    pub codebook_sizes: Vec<usize>,
    /// Mean over prefix lengths, in bits.
    pub prefix_entropy: f64,
    pub prefix_entropy_per_level: Vec<f64>,
    /// Depth (1-based) → Sim(depth).
    pub sim_curve: BTreeMap<usize, f64>,
    pub excluded_zero_norm: usize,
    pub probe_accuracy: Option<f64>,
    /// Set when a probe ran: linear softmax probe on codeword reconstructions.
    pub probe_kind: Option<String>,
}

/// Computes every diagnostic that the supplied inputs allow.
pub fn diagnose(
    model: &RqModel,
    assign: &SidAssignment,
    emb: Option<&EmbeddingSet>,
    labels: Option<&HashMap<String, String>>,
    probe_seed: u64,
) -> Result<DiagnosticsReport> {
    let entropy = prefix_entropy(assign)?;
    let (sim_curve, excluded) = match emb {
        Some(emb) => {
            let curve = reconstruction_curve(model, emb, model.levels())?;
            let map = curve
                .sim
                .iter()
                .enumerate()
                .map(|(h, &s)| (h + 1, s))
                .collect();
            (map, curve.excluded_zero_norm)
        }
        None => (BTreeMap::new(), 0),
    };
    let probe = labels
        .map(|labels| semantic_probe(assign, model, labels, probe_seed))
        .transpose()?;
    Ok(DiagnosticsReport {
        items: assign.len(),
        distinct_sids: sid_counts(assign).len(),
        collision_rate: collision_rate(assign)?,
        unique_ratio: unique_ratio(assign)?,
        utilization: codebook_utilization(assign, model)?,
        active_codes: active_codes(assign, model)?,
        codebook_sizes: model.sizes(),
        prefix_entropy: entropy.mean,
        prefix_entropy_per_level: entropy.per_prefix,
        sim_curve,
        excluded_zero_norm: excluded,
        probe_accuracy: probe.as_ref().map(|p| p.accuracy),
        probe_kind: probe.map(|_| "softmax-regression-on-reconstructions".to_owned()),
    })
}

impl DiagnosticsReport {
    /// Aligned text table: Collision, Unique, Util., Entropy, then extras.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>10} {:>10} {:>10} {:>10}", "Collision", "Unique", "Util.", "Entropy");
        let _ = writeln!(
            out,
            "{:>9.1}% {:>9.1}% {:>9.1}% {:>10.2}",
            100.0 * self.collision_rate,
            100.0 * self.unique_ratio,
            100.0 * self.utilization,
            self.prefix_entropy
        );
        let _ = writeln!(out, "items {}  distinct SIDs {}", self.items, self.distinct_sids);
        let levels: Vec<String> = self
            .active_codes
            .iter()
            .zip(&self.codebook_sizes)
            .map(|(a, k)| format!("{a}/{k}"))
            .collect();
        let _ = writeln!(out, "active codes per level  {}", levels.join("  "));
        let per: Vec<String> = self.prefix_entropy_per_level.iter().map(|e| format!("{e:.3}")).collect();
        let _ = writeln!(out, "prefix entropy per length  {}", per.join("  "));
        if !self.sim_curve.is_empty() {
            let sims: Vec<String> = self.sim_curve.iter().map(|(h, s)| format!("H={h}:{s:.3}")).collect();
            let _ = writeln!(out, "Sim  {}", sims.join("  "));
        }
        if let Some(acc) = self.probe_accuracy {
            let _ = writeln!(out, "probe accuracy  {:.1}%", 100.0 * acc);
        }
        out
    }
}
