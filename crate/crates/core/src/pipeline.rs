//! Four cached stages: ingest or synthesize, fit and assign, diagnostics,
//! corpus export plus baseline evaluation.
//!
//! Each stage has a cache key: the SHA-256 of its configuration section and
//! of every input file. `manifest.json` in the output directory records keys
//! and output hashes. A stage whose key matches and whose outputs exist is
//! skipped. A stage whose outputs exist under a different key is refused
//! unless `run.force` is set.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::corpus::{self, DEFAULT_MAX_HISTORY};
use crate::datamodel::{
    ids_path_for, k_core_filter, leave_last_out_split, load_embeddings, load_interactions, load_items, save_embeddings,
    save_interactions, save_items,
};
use crate::diagnostics::{diagnose, semantic_probe};
use crate::error::{Error, Result};
use crate::recommender::{
    evaluate, save_baseline, train_ngram, train_popularity, Baseline, EvalConfig, TokenSpace,
};
use crate::rq::{self, assign_all, build_trie, RqConfig, RqModel};
use crate::synthgen::{generate_catalog, generate_interactions, SynthConfig};

pub const CATALOG_FILE: &str = "catalog.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const EMBEDDING_IDS_FILE: &str = "embeddings.bin.ids";
pub const INTERACTIONS_FILE: &str = "interactions.tsv";
pub const MODEL_FILE: &str = "codebook.sidrq";
pub const ASSIGNMENT_FILE: &str = "assignment.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const DIAGNOSTICS_TABLE_FILE: &str = "diagnostics.txt";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const CHAT_FILE: &str = "corpus.chat.txt";
pub const VOCAB_FILE: &str = "sid_vocab.txt";
pub const BASELINE_FILE: &str = "baseline.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const METRICS_CSV_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Environment variable prefix for config overrides.
pub const ENV_PREFIX: &str = "SIDFORGE_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathsConfig {
    #[serde(default)]
    pub items: Option<PathBuf>,
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    #[serde(default)]
    pub interactions: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    #[serde(default = "default_k_core")]
    pub k_core: usize,
}

fn default_k_core() -> usize {
    5
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { k_core: default_k_core() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsConfig {
    #[serde(default)]
    pub probe_seed: u64,
    #[serde(default = "yes")]
    pub probe: bool,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            probe_seed: 0,
            probe: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    #[serde(default = "default_corpus_n")]
    pub n: usize,
    #[serde(default = "default_max_history")]
    pub max_history: usize,
    #[serde(default)]
    pub seed: u64,
    /// Also write the rendered chat text.
    #[serde(default)]
    pub chat_text: bool,
}

fn default_corpus_n() -> usize {
    10_000
}

fn default_max_history() -> usize {
    DEFAULT_MAX_HISTORY
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n: default_corpus_n(),
            max_history: default_max_history(),
            seed: 0,
            chat_text: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// `ngram` or `popularity`.
    #[serde(default = "default_kind")]
    pub kind: String,
    /// Defaults to SID depth + 1, so the previous item's full SID is context.
    #[serde(default)]
    pub order: Option<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(flatten)]
    pub eval: EvalConfig,
}

fn default_kind() -> String {
    "ngram".into()
}

fn default_alpha() -> f64 {
    0.1
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            kind: default_kind(),
            order: None,
            alpha: default_alpha(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageToggles {
    #[serde(default = "yes")]
    pub ingest: bool,
    #[serde(default = "yes")]
    pub fit: bool,
    #[serde(default = "yes")]
    pub diagnostics: bool,
    #[serde(default = "yes")]
    pub corpus: bool,
    #[serde(default = "yes")]
    pub eval: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        StageToggles {
            ingest: true,
            fit: true,
            diagnostics: true,
            corpus: true,
            eval: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Worker threads; `None` uses all cores. Outputs do not depend on it.
    #[serde(default)]
    pub workers: Option<usize>,
    /// Recompute stages whose cached outputs are stale instead of refusing.
    #[serde(default)]
    pub force: bool,
}

fn yes() -> bool {
    true
}

/// The whole pipeline configuration, read from one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub ingest: IngestConfig,
    pub rq: RqConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub eval: BaselineConfig,
    #[serde(default)]
    pub stages: StageToggles,
    #[serde(default)]
    pub run: RunConfig,
}

/// Applies `SIDFORGE_<SECTION>_<KEY>=value` overrides to a config document.
/// Values that parse as JSON are used as such, anything else as a string.
///
/// ```
/// use sidforge::pipeline::apply_env_overrides;
///
/// let mut doc = serde_json::json!({"run": {"workers": 1}, "synth": null});
/// apply_env_overrides(&mut doc, [
///     ("SIDFORGE_RUN_WORKERS".to_string(), "4".to_string()),
///     ("SIDFORGE_SYNTH_ENRICHMENT_LEVEL".to_string(), "0.5".to_string()),
///     ("HOME".to_string(), "/root".to_string()),
/// ]).unwrap();
/// assert_eq!(doc["run"]["workers"], 4);
/// assert_eq!(doc["synth"]["enrichment_level"], 0.5);
/// ```
pub fn apply_env_overrides(doc: &mut Value, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
    let mut vars: Vec<(String, String)> = vars
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    vars.sort();
    let root = doc
        .as_object_mut()
        .ok_or_else(|| Error::Config("config document must be a JSON object".into()))?;
    for (name, raw) in vars {
        let rest = name[ENV_PREFIX.len()..].to_lowercase();
        let (section, key) = rest
            .split_once('_')
            .ok_or_else(|| Error::Config(format!("{name}: expected {ENV_PREFIX}<SECTION>_<KEY>")))?;
        let value = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
        let slot = root.entry(section.to_owned()).or_insert(Value::Null);
        if slot.is_null() {
            *slot = Value::Object(Default::default());
        }
        slot.as_object_mut()
            .ok_or_else(|| Error::Config(format!("{name}: section {section:?} is not an object")))?
            .insert(key.to_owned(), value);
    }
    Ok(())
}

impl PipelineConfig {
    /// Parses a config document, applying environment overrides first.
    pub fn from_json_with_env(text: &str, vars: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut doc: Value = serde_json::from_str(text)?;
        apply_env_overrides(&mut doc, vars)?;
        let cfg: PipelineConfig = serde_json::from_value(doc)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_with_env(&text, std::env::vars())
    }

    pub fn validate(&self) -> Result<()> {
        self.rq.validate()?;
        if let Some(s) = &self.synth {
            s.validate()?;
        } else if self.stages.ingest {
            for (name, p) in [
                ("items", &self.paths.items),
                ("embeddings", &self.paths.embeddings),
                ("interactions", &self.paths.interactions),
            ] {
                match p {
                    None => return Err(Error::Config(format!("paths.{name} is required without a synth section"))),
                    Some(p) if !p.exists() => {
                        return Err(Error::Config(format!("paths.{name} {} does not exist", p.display())))
                    }
                    _ => {}
                }
            }
        }
        if self.run.workers == Some(0) {
            return Err(Error::Config("run.workers must be positive".into()));
        }
        if !matches!(self.eval.kind.as_str(), "ngram" | "popularity") {
            return Err(Error::Config(format!("eval.kind must be ngram or popularity, got {:?}", self.eval.kind)));
        }
        Ok(())
    }
}

/// The four pipeline stages; stage 4 covers both corpus export and evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Fit,
    Diagnostics,
    Corpus,
    Eval,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Fit => "fit",
            Stage::Diagnostics => "diagnostics",
            Stage::Corpus => "corpus",
            Stage::Eval => "eval",
        }
    }

    /// 1-based pipeline stage number.
    pub fn number(self) -> u8 {
        match self {
            Stage::Ingest => 1,
            Stage::Fit => 2,
            Stage::Diagnostics => 3,
            Stage::Corpus | Stage::Eval => 4,
        }
    }
}

/// A failure tagged with the stage it happened in.
#[derive(Debug, thiserror::Error)]
#[error("stage {} ({}) failed: {source}", stage.number(), stage.name())]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ran,
    Cached,
    Disabled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: Stage,
    pub status: StageStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub output_dir: PathBuf,
    pub stages: Vec<StageOutcome>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub key: String,
    /// Input file name → SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output file name → SHA-256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
    /// Every seed that influenced an artifact.
    pub seeds: BTreeMap<String, u64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    rq::hex(&Sha256::digest(bytes))
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Runs the configured stages inside a pool of `run.workers` threads.
pub fn run_pipeline(cfg: &PipelineConfig) -> std::result::Result<PipelineReport, PipelineError> {
    let pool_error = |e: rayon::ThreadPoolBuildError| PipelineError {
        stage: Stage::Ingest,
        source: Error::ThreadPool(e.to_string()),
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.run.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(pool_error)?;
    pool.install(|| Runner::new(cfg)?.run())
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    dir: PathBuf,
    manifest: Manifest,
    outcomes: Vec<StageOutcome>,
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a PipelineConfig) -> std::result::Result<Self, PipelineError> {
        let at = |source| PipelineError { stage: Stage::Ingest, source };
        cfg.validate().map_err(at)?;
        let dir = cfg.paths.output_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|e| at(Error::io(&dir, e)))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest = if manifest_path.exists() {
            let text = std::fs::read_to_string(&manifest_path).map_err(|e| at(Error::io(&manifest_path, e)))?;
            serde_json::from_str(&text).map_err(|e| at(e.into()))?
        } else {
            Manifest::default()
        };
        Ok(Runner {
            cfg,
            dir,
            manifest,
            outcomes: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn run(mut self) -> std::result::Result<PipelineReport, PipelineError> {
        let cfg = self.cfg;
        self.stage(Stage::Ingest, cfg.stages.ingest, Self::ingest)?;
        self.stage(Stage::Fit, cfg.stages.fit, Self::fit)?;
        self.stage(Stage::Diagnostics, cfg.stages.diagnostics, Self::diagnostics)?;
        self.stage(Stage::Corpus, cfg.stages.corpus, Self::corpus)?;
        self.stage(Stage::Eval, cfg.stages.eval, Self::eval)?;
        Ok(PipelineReport {
            output_dir: self.dir,
            stages: self.outcomes,
        })
    }

    /// Input files and the config section that feed a stage.
    fn stage_inputs(&self, stage: Stage) -> Result<(Vec<(String, PathBuf)>, Value)> {
        let cfg = self.cfg;
        let local = |names: &[&str]| -> Vec<(String, PathBuf)> {
            names.iter().map(|n| (n.to_string(), self.path(n))).collect()
        };
        Ok(match stage {
            Stage::Ingest => match &cfg.synth {
                Some(s) => (Vec::new(), serde_json::json!({"synth": s, "ingest": cfg.ingest})),
                None => {
                    let ids = ids_path_for(cfg.paths.embeddings.as_ref().unwrap());
                    let mut files = vec![
                        ("items".to_string(), cfg.paths.items.clone().unwrap()),
                        ("embeddings".to_string(), cfg.paths.embeddings.clone().unwrap()),
                        ("interactions".to_string(), cfg.paths.interactions.clone().unwrap()),
                    ];
                    if ids.exists() {
                        files.push(("embedding_ids".to_string(), ids));
                    }
                    (files, serde_json::json!({"ingest": cfg.ingest}))
                }
            },
            Stage::Fit => (local(&[EMBEDDINGS_FILE, EMBEDDING_IDS_FILE]), serde_json::to_value(&cfg.rq)?),
            Stage::Diagnostics => (
                local(&[CATALOG_FILE, EMBEDDINGS_FILE, EMBEDDING_IDS_FILE, MODEL_FILE, ASSIGNMENT_FILE]),
                serde_json::to_value(&cfg.diagnostics)?,
            ),
            Stage::Corpus => (
                local(&[CATALOG_FILE, INTERACTIONS_FILE, MODEL_FILE, ASSIGNMENT_FILE]),
                serde_json::to_value(&cfg.corpus)?,
            ),
            Stage::Eval => (
                local(&[INTERACTIONS_FILE, MODEL_FILE, ASSIGNMENT_FILE]),
                serde_json::to_value(&cfg.eval)?,
            ),
        })
    }

    fn stage_outputs(&self, stage: Stage) -> Vec<&'static str> {
        match stage {
            Stage::Ingest => vec![CATALOG_FILE, EMBEDDINGS_FILE, EMBEDDING_IDS_FILE, INTERACTIONS_FILE],
            Stage::Fit => vec![MODEL_FILE, ASSIGNMENT_FILE],
            Stage::Diagnostics => vec![DIAGNOSTICS_FILE, DIAGNOSTICS_TABLE_FILE],
            Stage::Corpus => {
                let mut v = vec![CORPUS_FILE, VOCAB_FILE];
                if self.cfg.corpus.chat_text {
                    v.push(CHAT_FILE);
                }
                v
            }
            Stage::Eval => vec![BASELINE_FILE, METRICS_FILE, METRICS_CSV_FILE],
        }
    }

    fn stage(
        &mut self,
        stage: Stage,
        enabled: bool,
        body: fn(&mut Self) -> Result<()>,
    ) -> std::result::Result<(), PipelineError> {
        let at = |source| PipelineError { stage, source };
        if !enabled {
            self.outcomes.push(StageOutcome {
                stage,
                status: StageStatus::Disabled,
            });
            return Ok(());
        }
        let (inputs, section) = self.stage_inputs(stage).map_err(at)?;
        let mut input_hashes = BTreeMap::new();
        let mut hasher = Sha256::new();
        hasher.update(stage.name().as_bytes());
        hasher.update(serde_json::to_vec(&section).map_err(|e| at(e.into()))?);
        for (name, path) in &inputs {
            let h = file_hash(path).map_err(at)?;
            hasher.update(name.as_bytes());
            hasher.update(h.as_bytes());
            input_hashes.insert(name.clone(), h);
        }
        let key = rq::hex(&hasher.finalize());
        let outputs = self.stage_outputs(stage);
        let all_exist = outputs.iter().all(|o| self.path(o).exists());
        let any_exist = outputs.iter().any(|o| self.path(o).exists());
        let recorded = self.manifest.stages.get(stage.name());

        if all_exist && recorded.is_some_and(|r| r.key == key) {
            log::info!("stage {} ({}): cache hit", stage.number(), stage.name());
            self.outcomes.push(StageOutcome {
                stage,
                status: StageStatus::Cached,
            });
            return Ok(());
        }
        if any_exist && !self.cfg.run.force {
            let message = match recorded {
                Some(r) => format!(
                    "input hash mismatch (recorded key {}, current key {}); rerun with force to recompute",
                    &r.key[..12],
                    &key[..12]
                ),
                None => "outputs exist without a manifest record; rerun with force to overwrite".into(),
            };
            return Err(at(Error::StaleCache {
                stage: stage.name().into(),
                message,
            }));
        }

        log::info!("stage {} ({}): running", stage.number(), stage.name());
        let result = body(self);
        if let Err(e) = result {
            for o in &outputs {
                let _ = std::fs::remove_file(self.path(o));
            }
            self.manifest.stages.remove(stage.name());
            let _ = self.save_manifest();
            return Err(at(e));
        }
        let mut output_hashes = BTreeMap::new();
        for o in &outputs {
            output_hashes.insert(o.to_string(), file_hash(&self.path(o)).map_err(at)?);
        }
        self.manifest.stages.insert(
            stage.name().into(),
            StageRecord {
                key,
                inputs: input_hashes,
                outputs: output_hashes,
            },
        );
        self.record_seeds();
        self.save_manifest().map_err(at)?;
        self.outcomes.push(StageOutcome {
            stage,
            status: StageStatus::Ran,
        });
        Ok(())
    }

    fn record_seeds(&mut self) {
        let cfg = self.cfg;
        let seeds = &mut self.manifest.seeds;
        if let Some(s) = &cfg.synth {
            seeds.insert("synth".into(), s.seed);
        }
        seeds.insert("rq".into(), cfg.rq.seed);
        seeds.insert("probe".into(), cfg.diagnostics.probe_seed);
        seeds.insert("corpus".into(), cfg.corpus.seed);
    }

    fn save_manifest(&self) -> Result<()> {
        let path = self.path(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn ingest(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let (catalog, embeddings, log) = match &cfg.synth {
            Some(s) => {
                let synth = generate_catalog(s)?;
                let log = generate_interactions(&synth, s)?;
                (synth.catalog, synth.embeddings, log)
            }
            None => (
                load_items(cfg.paths.items.as_ref().unwrap())?,
                load_embeddings(cfg.paths.embeddings.as_ref().unwrap())?,
                load_interactions(cfg.paths.interactions.as_ref().unwrap())?,
            ),
        };
        for id in embeddings.item_ids() {
            if catalog.get(id).is_none() {
                return Err(Error::UnknownItem(id.clone()));
            }
        }
        let filtered = k_core_filter(&log, cfg.ingest.k_core);
        if let Some(ev) = filtered.events.iter().find(|e| catalog.get(&e.item_id).is_none()) {
            return Err(Error::UnknownItem(ev.item_id.clone()));
        }
        save_items(self.path(CATALOG_FILE), &catalog)?;
        save_embeddings(self.path(EMBEDDINGS_FILE), &embeddings)?;
        save_interactions(self.path(INTERACTIONS_FILE), &filtered)?;
        Ok(())
    }

    fn fit(&mut self) -> Result<()> {
        let emb = load_embeddings(self.path(EMBEDDINGS_FILE))?;
        let model = RqModel::fit(&emb, &self.cfg.rq)?;
        let assign = assign_all(&model, &emb)?;
        rq::save_model(self.path(MODEL_FILE), &model)?;
        rq::save_assignment(self.path(ASSIGNMENT_FILE), &assign)?;
        Ok(())
    }

    fn diagnostics(&mut self) -> Result<()> {
        let model = rq::load_model(self.path(MODEL_FILE))?;
        let assign = rq::load_assignment(self.path(ASSIGNMENT_FILE))?;
        check_assignment(&model, &assign)?;
        let emb = load_embeddings(self.path(EMBEDDINGS_FILE))?;
        let catalog = load_items(self.path(CATALOG_FILE))?;
        let mut report = diagnose(&model, &assign, Some(&emb), None, self.cfg.diagnostics.probe_seed)?;
        if self.cfg.diagnostics.probe {
            let labels: HashMap<String, String> = catalog.labels().into_iter().collect();
            match semantic_probe(&assign, &model, &labels, self.cfg.diagnostics.probe_seed) {
                Ok(p) => {
                    report.probe_accuracy = Some(p.accuracy);
                    report.probe_kind = Some("softmax-regression-on-reconstructions".into());
                }
                Err(e) => log::warn!("semantic probe skipped: {e}"),
            }
        }
        let path = self.path(DIAGNOSTICS_FILE);
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        let path = self.path(DIAGNOSTICS_TABLE_FILE);
        std::fs::write(&path, report.to_table()).map_err(|e| Error::io(&path, e))
    }

    fn corpus(&mut self) -> Result<()> {
        let c = &self.cfg.corpus;
        let model = rq::load_model(self.path(MODEL_FILE))?;
        let assign = rq::load_assignment(self.path(ASSIGNMENT_FILE))?;
        check_assignment(&model, &assign)?;
        let catalog = load_items(self.path(CATALOG_FILE))?;
        let split = leave_last_out_split(&load_interactions(self.path(INTERACTIONS_FILE))?);
        let pools = corpus::build_pools(&split, &catalog, &assign, c.max_history)?;
        for (t, pool) in corpus::TaskId::ALL.iter().zip(&pools) {
            if pool.skipped > 0 {
                log::info!("task {t}: {} examples, {} skipped", pool.examples.len(), pool.skipped);
            }
        }
        let records = corpus::sample_corpus(&pools, c.n, c.seed)?;
        corpus::save_corpus(self.path(CORPUS_FILE), &records)?;
        corpus::save_vocabulary(self.path(VOCAB_FILE), &model)?;
        if c.chat_text {
            corpus::save_chat_text(self.path(CHAT_FILE), &records)?;
        }
        Ok(())
    }

    fn eval(&mut self) -> Result<()> {
        let e = &self.cfg.eval;
        let model = rq::load_model(self.path(MODEL_FILE))?;
        let assign = rq::load_assignment(self.path(ASSIGNMENT_FILE))?;
        check_assignment(&model, &assign)?;
        let split = leave_last_out_split(&load_interactions(self.path(INTERACTIONS_FILE))?);
        let space = TokenSpace::new(&model.sizes())?;
        let baseline = train_baseline(e, &split, &assign, &space)?;
        let trie = build_trie(&assign)?;
        let report = evaluate(&baseline, &space, &split, &assign, &trie, &e.eval)?;
        save_baseline(self.path(BASELINE_FILE), &baseline)?;
        let path = self.path(METRICS_FILE);
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|err| Error::io(&path, err))?;
        let path = self.path(METRICS_CSV_FILE);
        std::fs::write(&path, report.to_csv()).map_err(|err| Error::io(&path, err))
    }
}

/// Refuses an assignment produced by a different model.
pub fn check_assignment(model: &RqModel, assign: &rq::SidAssignment) -> Result<()> {
    if assign.model_hash() != model.hash() {
        return Err(Error::StaleCache {
            stage: "fit".into(),
            message: format!(
                "assignment was produced by model {} but the codebook is {}",
                assign.model_hash(),
                model.hash()
            ),
        });
    }
    Ok(())
}

/// Trains the configured baseline kind.
pub fn train_baseline(
    cfg: &BaselineConfig,
    split: &crate::datamodel::SplitDataset,
    assign: &rq::SidAssignment,
    space: &TokenSpace,
) -> Result<Baseline> {
    Ok(match cfg.kind.as_str() {
        "popularity" => Baseline::Popularity(train_popularity(split, assign, space, cfg.alpha)?),
        _ => {
            let order = cfg.order.unwrap_or(space.levels() + 1);
            Baseline::Ngram(train_ngram(split, assign, space, order, cfg.alpha)?)
        }
    })
}
