//! Hierarchical residual quantization.
//!
//! Each level holds a codebook fitted by k-means on the residuals left over
//! by the previous levels. Encoding walks the levels, picks the nearest
//! codeword and subtracts it; decoding sums the chosen codewords.

mod assign;
mod io;
mod kmeans;
mod sid;
mod trie;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datamodel::{write_matrix_block, EmbeddingSet};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

pub use assign::{assign_all, load_assignment, save_assignment, SidAssignment};
pub use io::{load_model, model_from_bytes, model_to_bytes, save_model, MODEL_FORMAT_VERSION};
pub use sid::{parse_sid, render_token, SidSequence, MAX_LEVELS};
pub use trie::{build_trie, SidTrie, TrieNodeId};

/// Quantizer hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RqConfig {
    /// Requested codebook size per level; its length is the SID depth.
    pub codebook_sizes: Vec<usize>,
    #[serde(default = "default_max_iters")]
    pub kmeans_max_iters: usize,
    #[serde(default = "default_rel_tol")]
    pub kmeans_rel_tol: f64,
    pub seed: u64,
    /// Scale embeddings to unit norm before fitting and encoding.
    #[serde(default)]
    pub normalize: bool,
}

fn default_max_iters() -> usize {
    50
}

fn default_rel_tol() -> f64 {
    1e-4
}

impl RqConfig {
    pub fn new(codebook_sizes: Vec<usize>, seed: u64) -> Self {
        RqConfig {
            codebook_sizes,
            kmeans_max_iters: default_max_iters(),
            kmeans_rel_tol: default_rel_tol(),
            seed,
            normalize: false,
        }
    }

    pub fn levels(&self) -> usize {
        self.codebook_sizes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.codebook_sizes.is_empty() {
            return Err(Error::Config("at least one quantization level required".into()));
        }
        if self.codebook_sizes.len() > MAX_LEVELS {
            return Err(Error::Config(format!("at most {MAX_LEVELS} levels supported")));
        }
        if self.codebook_sizes.iter().any(|&k| k == 0) {
            return Err(Error::Config("codebook sizes must be at least 1".into()));
        }
        if self.codebook_sizes.iter().any(|&k| k > u32::MAX as usize) {
            return Err(Error::Config("codebook size exceeds u32 range".into()));
        }
        if self.kmeans_max_iters == 0 {
            return Err(Error::Config("kmeans_max_iters must be at least 1".into()));
        }
        if !(self.kmeans_rel_tol >= 0.0) {
            return Err(Error::Config("kmeans_rel_tol must be non-negative".into()));
        }
        Ok(())
    }
}

/// Centroids of one level, stored as `f32` and mirrored in `f64` for search.
#[derive(Clone, Debug)]
pub struct Codebook {
    level: usize,
    dim: usize,
    centroids: Vec<f32>,
    wide: Vec<f64>,
}

impl PartialEq for Codebook {
    fn eq(&self, other: &Self) -> bool {
        self.level == other.level && self.dim == other.dim && self.centroids == other.centroids
    }
}

impl Codebook {
    pub fn new(level: usize, dim: usize, centroids: Vec<f32>) -> Result<Self> {
        if dim == 0 || centroids.is_empty() || centroids.len() % dim != 0 {
            return Err(Error::DimMismatch {
                expected: dim,
                actual: centroids.len(),
            });
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::ModelFormat(format!("non-finite centroid at level {level}")));
        }
        let wide = centroids.iter().map(|&v| f64::from(v)).collect();
        Ok(Codebook {
            level,
            dim,
            centroids,
            wide,
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn size(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroid(&self, k: usize) -> &[f32] {
        &self.centroids[k * self.dim..(k + 1) * self.dim]
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    fn centroid_wide(&self, k: usize) -> &[f64] {
        &self.wide[k * self.dim..(k + 1) * self.dim]
    }

    /// Nearest codeword to `residual`, smallest index on ties.
    pub fn nearest(&self, residual: &[f64]) -> (usize, f64) {
        kmeans::nearest(residual, &self.wide, self.dim)
    }
}

/// Per-level fit record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub requested_size: usize,
    /// Number of codewords actually fitted; smaller than requested when the
    /// level saw fewer distinct residuals.
    pub size: usize,
    pub iterations: usize,
    /// Mean squared error after each Lloyd assignment step.
    pub mse_trace: Vec<f64>,
    /// Mean squared residual norm after this level, using the stored codebook.
    pub residual_mse: f64,
}

/// A fitted residual quantizer.
#[derive(Clone, Debug, PartialEq)]
pub struct RqModel {
    config: RqConfig,
    dim: usize,
    codebooks: Vec<Codebook>,
    fit_stats: Vec<LevelStats>,
    hash: String,
}

impl RqModel {
    /// Assembles a model from explicit codebooks, e.g. hand-built or loaded.
    pub fn from_codebooks(
        config: RqConfig,
        codebooks: Vec<Codebook>,
        fit_stats: Vec<LevelStats>,
    ) -> Result<Self> {
        let dim = codebooks.first().map(|c| c.dim).ok_or(Error::Empty("codebooks"))?;
        if codebooks.len() != config.levels() {
            return Err(Error::ModelFormat(format!(
                "{} codebooks for {} configured levels",
                codebooks.len(),
                config.levels()
            )));
        }
        for (h, cb) in codebooks.iter().enumerate() {
            if cb.dim != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: cb.dim,
                });
            }
            if cb.level != h {
                return Err(Error::ModelFormat(format!("codebook {h} labelled level {}", cb.level)));
            }
        }
        let hash = model_hash(&config, dim, &codebooks);
        Ok(RqModel {
            config,
            dim,
            codebooks,
            fit_stats,
            hash,
        })
    }

    /// Convenience for tests and docs: one `Vec<Vec<f32>>` of centroids per level.
    pub fn from_centroids(levels: Vec<Vec<Vec<f32>>>) -> Result<Self> {
        let dim = levels
            .first()
            .and_then(|l| l.first())
            .map(Vec::len)
            .ok_or(Error::Empty("codebooks"))?;
        let sizes = levels.iter().map(Vec::len).collect();
        let codebooks = levels
            .into_iter()
            .enumerate()
            .map(|(h, rows)| {
                if rows.iter().any(|r| r.len() != dim) {
                    return Err(Error::DimMismatch {
                        expected: dim,
                        actual: rows.iter().map(Vec::len).find(|&l| l != dim).unwrap_or(0),
                    });
                }
                Codebook::new(h, dim, rows.concat())
            })
            .collect::<Result<Vec<_>>>()?;
        RqModel::from_codebooks(RqConfig::new(sizes, 0), codebooks, Vec::new())
    }

    pub fn config(&self) -> &RqConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn levels(&self) -> usize {
        self.codebooks.len()
    }

    pub fn codebooks(&self) -> &[Codebook] {
        &self.codebooks
    }

    /// Effective codebook sizes, level by level.
    pub fn sizes(&self) -> Vec<usize> {
        self.codebooks.iter().map(Codebook::size).collect()
    }

    pub fn fit_stats(&self) -> &[LevelStats] {
        &self.fit_stats
    }

    /// Hex SHA-256 over the configuration and centroid bytes.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    fn prepare(&self, x: &[f32]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        let mut r: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("input vector has non-finite entries".into()));
        }
        if self.config.normalize {
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                r.iter_mut().for_each(|v| *v /= norm);
            }
        }
        Ok(r)
    }

    /// Encodes `x` level by level.
    pub fn encode(&self, x: &[f32]) -> Result<SidSequence> {
        Ok(self.encode_with_residuals(x)?.0)
    }

    /// Encodes `x` and also returns the residual entering each level plus
    /// the final one: `H + 1` vectors, the first being the (prepared) input.
    pub fn encode_with_residuals(&self, x: &[f32]) -> Result<(SidSequence, Vec<Vec<f64>>)> {
        let mut residual = self.prepare(x)?;
        let mut trace = Vec::with_capacity(self.levels() + 1);
        let mut tokens = Vec::with_capacity(self.levels());
        for cb in &self.codebooks {
            let (k, _) = cb.nearest(&residual);
            trace.push(residual.clone());
            for (r, c) in residual.iter_mut().zip(cb.centroid_wide(k)) {
                *r -= c;
            }
            tokens.push(k as u32);
        }
        trace.push(residual);
        Ok((SidSequence::new(tokens), trace))
    }

    /// Sum of the first `depth` selected codewords (all levels when `None`).
    pub fn decode(&self, sid: &SidSequence, depth: Option<usize>) -> Result<Vec<f64>> {
        sid.validate(&self.sizes())?;
        let depth = depth.unwrap_or(self.levels());
        if depth > self.levels() {
            return Err(Error::Config(format!(
                "decode depth {depth} exceeds model depth {}",
                self.levels()
            )));
        }
        let mut out = vec![0.0; self.dim];
        for (cb, &token) in self.codebooks.iter().zip(sid.tokens()).take(depth) {
            for (o, c) in out.iter_mut().zip(cb.centroid_wide(token as usize)) {
                *o += c;
            }
        }
        Ok(out)
    }

    /// Fits the codebooks level by level on the residuals of `emb`.
    pub fn fit(emb: &EmbeddingSet, cfg: &RqConfig) -> Result<RqModel> {
        cfg.validate()?;
        if emb.is_empty() {
            return Err(Error::Empty("embedding set"));
        }
        let dim = emb.dim();
        let source = if cfg.normalize {
            emb.normalized()
        } else {
            emb.clone()
        };
        let mut residuals: Vec<f64> = source.as_slice().iter().map(|&v| f64::from(v)).collect();
        let n = emb.count();
        let mut codebooks = Vec::with_capacity(cfg.levels());
        let mut fit_stats = Vec::with_capacity(cfg.levels());
        for (h, &requested) in cfg.codebook_sizes.iter().enumerate() {
            let k = kmeans::distinct_rows(&residuals, dim, requested).min(requested);
            if k < requested {
                log::info!("level {h}: only {k} distinct residuals, shrinking codebook from {requested}");
            }
            let mut rng = rng::stream(cfg.seed, Purpose::KMeansLevel, h as u64);
            let init = kmeans::kmeans_plus_plus(&residuals, dim, k, &mut rng);
            let fit = kmeans::lloyd(&residuals, dim, init, cfg.kmeans_max_iters, cfg.kmeans_rel_tol);
            let stored: Vec<f32> = fit.centroids.iter().map(|&v| v as f32).collect();
            let codebook = Codebook::new(h, dim, stored)?;

            let assignment = kmeans::assign(&residuals, &codebook.wide, dim);
            for (row, &(c, _)) in residuals.chunks_exact_mut(dim).zip(&assignment) {
                for (r, v) in row.iter_mut().zip(codebook.centroid_wide(c)) {
                    *r -= v;
                }
            }
            let residual_mse = residuals
                .chunks_exact(dim)
                .map(|r| r.iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                / n as f64;
            fit_stats.push(LevelStats {
                requested_size: requested,
                size: k,
                iterations: fit.iterations,
                mse_trace: fit.mse_trace,
                residual_mse,
            });
            codebooks.push(codebook);
        }
        RqModel::from_codebooks(cfg.clone(), codebooks, fit_stats)
    }
}

fn model_hash(config: &RqConfig, dim: usize, codebooks: &[Codebook]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(config).expect("config serializes"));
    hasher.update((dim as u64).to_le_bytes());
    let mut block = Vec::new();
    for cb in codebooks {
        block.clear();
        write_matrix_block(&mut block, cb.size(), cb.dim, &cb.centroids);
        hasher.update(&block);
    }
    hex(&hasher.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Mean squared final residual norm of `emb` under `model`.
pub fn quantization_mse(model: &RqModel, emb: &EmbeddingSet) -> Result<f64> {
    let mut total = 0.0;
    for row in emb.rows() {
        let (_, trace) = model.encode_with_residuals(row)?;
        total += trace.last().unwrap().iter().map(|v| v * v).sum::<f64>();
    }
    Ok(total / emb.count() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(seed: u64, n: usize, dim: usize) -> EmbeddingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        EmbeddingSet::new(dim, rows, (0..n).map(|i| format!("i{i}")).collect()).unwrap()
    }

    fn two_d_model() -> RqModel {
        RqModel::from_centroids(vec![
            vec![vec![0.0, 0.0], vec![1.0, 0.0]],
            vec![vec![0.0, 0.0], vec![0.0, 1.0]],
        ])
        .unwrap()
    }

    #[test]
    fn two_level_hand_example() {
        let model = two_d_model();
        let (sid, trace) = model.encode_with_residuals(&[1.0, 1.0]).unwrap();
        assert_eq!(sid.tokens(), &[1, 1]);
        assert_eq!(trace.last().unwrap(), &vec![0.0, 0.0]);
        assert_eq!(model.decode(&sid, Some(2)).unwrap(), vec![1.0, 1.0]);
        assert_eq!(model.decode(&sid, Some(0)).unwrap(), vec![0.0, 0.0]);
        assert_eq!(model.decode(&sid, Some(1)).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn exact_codeword_gives_zero_residual() {
        let rows: Vec<Vec<f32>> = (0..10).map(|k| vec![k as f32, (k * k) as f32]).collect();
        let model = RqModel::from_centroids(vec![rows.clone()]).unwrap();
        let (sid, trace) = model.encode_with_residuals(&rows[7]).unwrap();
        assert_eq!(sid.tokens(), &[7]);
        assert!(trace[1].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decode_rejects_out_of_range_tokens() {
        let model = two_d_model();
        assert!(matches!(
            model.decode(&SidSequence::new(vec![2, 0]), None),
            Err(Error::TokenOutOfRange { level: 0, .. })
        ));
        assert!(model.decode(&SidSequence::new(vec![0]), None).is_err());
    }

    #[test]
    fn encode_rejects_dim_mismatch() {
        assert!(matches!(
            two_d_model().encode(&[1.0, 2.0, 3.0]),
            Err(Error::DimMismatch { expected: 2, actual: 3 })
        ));
    }

    #[test]
    fn fit_recovers_exact_points() {
        let pts = vec![0.0, 0.0, 5.0, 1.0, -3.0, 2.0, 9.0, -9.0];
        let set = EmbeddingSet::new(2, pts.clone(), (0..4).map(|i| i.to_string()).collect()).unwrap();
        let model = RqModel::fit(&set, &RqConfig::new(vec![4], 1)).unwrap();
        let mut got: Vec<Vec<f32>> = (0..4).map(|k| model.codebooks()[0].centroid(k).to_vec()).collect();
        let mut want: Vec<Vec<f32>> = pts.chunks(2).map(<[f32]>::to_vec).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
        assert_eq!(quantization_mse(&model, &set).unwrap(), 0.0);
    }

    #[test]
    fn fit_shrinks_level_with_few_distinct_residuals() {
        let set = EmbeddingSet::new(1, vec![1.0, 1.0, 2.0], vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let model = RqModel::fit(&set, &RqConfig::new(vec![8, 4], 3)).unwrap();
        assert_eq!(model.fit_stats()[0].size, 2);
        assert_eq!(model.fit_stats()[0].requested_size, 8);
        // Everything is exactly represented after level 1.
        assert_eq!(model.fit_stats()[1].size, 1);
    }

    #[test]
    fn fit_traces_are_nonincreasing() {
        let set = random_set(4, 600, 6);
        let model = RqModel::fit(&set, &RqConfig::new(vec![16, 16, 8], 4)).unwrap();
        for stats in model.fit_stats() {
            for w in stats.mse_trace.windows(2) {
                assert!(w[1] <= w[0]);
            }
        }
        let mses: Vec<f64> = model.fit_stats().iter().map(|s| s.residual_mse).collect();
        assert!(mses.windows(2).all(|w| w[1] <= w[0]), "{mses:?}");
    }

    #[test]
    fn fit_is_deterministic_across_thread_counts() {
        let set = random_set(8, 500, 5);
        let cfg = RqConfig::new(vec![12, 6], 99);
        let fit_with = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| RqModel::fit(&set, &cfg).unwrap())
        };
        let a = fit_with(1);
        let b = fit_with(4);
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn fit_rejects_empty_and_bad_config() {
        let empty = EmbeddingSet::new(3, vec![], vec![]).unwrap();
        assert!(matches!(
            RqModel::fit(&empty, &RqConfig::new(vec![2], 0)),
            Err(Error::Empty(_))
        ));
        let set = random_set(1, 10, 2);
        assert!(RqModel::fit(&set, &RqConfig::new(vec![], 0)).is_err());
        assert!(RqModel::fit(&set, &RqConfig::new(vec![0], 0)).is_err());
    }

    #[test]
    fn paper_scale_configuration_accepted() {
        let cfg = RqConfig::new(vec![4096, 2048, 1024], 0);
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.levels(), 3);
    }

    #[test]
    fn normalized_model_encodes_scaled_inputs_identically() {
        let set = random_set(2, 200, 4);
        let mut cfg = RqConfig::new(vec![8, 8], 2);
        cfg.normalize = true;
        let model = RqModel::fit(&set, &cfg).unwrap();
        let x = set.row(3);
        let doubled: Vec<f32> = x.iter().map(|v| v * 2.0).collect();
        assert_eq!(model.encode(x).unwrap(), model.encode(&doubled).unwrap());
    }
}
