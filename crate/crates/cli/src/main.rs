//! `sidforge` command-line tool.
//!
//! Machine-readable JSON goes to stdout, human-readable tables and logs to
//! stderr. `sidforge run` exits with `10 + stage` when a pipeline stage
//! fails; other failures exit with 1.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sidforge::corpus;
use sidforge::datamodel::{
    k_core_filter, leave_last_out_split, load_embeddings, load_interactions, load_items, save_embeddings,
    save_interactions, save_items, EmbeddingSet,
};
use sidforge::diagnostics::{diagnose, reconstruction_curve};
use sidforge::pipeline::{self, check_assignment, train_baseline, BaselineConfig, PipelineConfig};
use sidforge::recommender::{evaluate, load_baseline, save_baseline, EvalConfig, SequenceModel, TokenSpace};
use sidforge::rq::{self, assign_all, build_trie, parse_sid, RqConfig, RqModel};
use sidforge::synthgen::{generate_catalog, generate_interactions, SynthConfig};

#[derive(Parser)]
#[command(name = "sidforge", version, about = "Semantic-ID toolkit for generative recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic catalog, embeddings and interaction log.
    Synth(SynthArgs),
    /// Validate inputs, apply k-core filtering and report the split.
    Ingest(IngestArgs),
    /// Fit residual-quantization codebooks.
    Fit(FitArgs),
    /// Assign a SID to every embedding.
    Encode(EncodeArgs),
    /// Reconstruct embeddings from SIDs.
    Decode(DecodeArgs),
    /// Collision, utilization, entropy, reconstruction and probe diagnostics.
    Diagnose(DiagnoseArgs),
    /// Mean cosine similarity between embeddings and depth-h reconstructions.
    ReconCurve(ReconArgs),
    /// Sample the eight-task conversational corpus.
    Corpus(CorpusArgs),
    /// Train an n-gram or popularity baseline over SID tokens.
    TrainBaseline(TrainArgs),
    /// Leave-last-out HR@K / NDCG@K with beam search.
    Eval(EvalArgs),
    /// Summarize a pipeline output directory.
    Report(ReportArgs),
    /// Run the cached four-stage pipeline from a config file.
    Run(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// JSON synth config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    items: Option<usize>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    categories: Option<usize>,
    #[arg(long)]
    enrichment: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    /// Inclusive events-per-user range, e.g. 5,20.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    events: Option<Vec<usize>>,
    #[arg(long)]
    dominant: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    interactions: PathBuf,
    #[arg(long, default_value_t = 5)]
    k_core: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    embeddings: PathBuf,
    /// Codebook size per level, e.g. 256,256,256.
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    out: PathBuf,
    /// Also write the SID assignment of the fitted embeddings.
    #[arg(long)]
    assign: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Rendered SID such as "<a_239><b_112><c_7>"; repeatable.
    #[arg(long, required = true)]
    sid: Vec<String>,
    /// Sum only the first `depth` codewords.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    assignment: PathBuf,
    /// Enables the reconstruction curve.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Item catalog whose categories label the probe.
    #[arg(long)]
    items: Option<PathBuf>,
    /// Probe split seed; required with --items.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReconArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    max_depth: Option<usize>,
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    interactions: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    assignment: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = corpus::DEFAULT_MAX_HISTORY)]
    max_history: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write rendered chat text.
    #[arg(long)]
    chat: Option<PathBuf>,
    /// Also write the SID token vocabulary.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    interactions: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    assignment: PathBuf,
    #[arg(long, default_value = "ngram", value_parser = ["ngram", "popularity"])]
    kind: String,
    /// Defaults to SID depth + 1.
    #[arg(long)]
    order: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long)]
    interactions: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    assignment: PathBuf,
    #[arg(long, default_value_t = 20)]
    beam: usize,
    #[arg(long, value_delimiter = ',', default_value = "5,10")]
    k: Vec<usize>,
    /// Predict from the train items only.
    #[arg(long)]
    exclude_validation: bool,
    /// Let beam search leave the catalog trie.
    #[arg(long)]
    unconstrained: bool,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Per-user rank dump.
    #[arg(long)]
    ranks: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    dir: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    force: bool,
}

/// Output files written by a command; removed again unless committed.
struct Outputs(Vec<PathBuf>);

impl Outputs {
    fn new() -> Self {
        Outputs(Vec::new())
    }

    fn track(&mut self, path: &Path) -> PathBuf {
        self.0.push(path.to_path_buf());
        path.to_path_buf()
    }

    fn commit(mut self) {
        self.0.clear();
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        for p in &self.0 {
            let _ = std::fs::remove_file(p);
        }
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_pair(model: &Path, assignment: &Path) -> Result<(RqModel, rq::SidAssignment)> {
    let model = rq::load_model(model)?;
    let assign = rq::load_assignment(assignment)?;
    check_assignment(&model, &assign)?;
    Ok((model, assign))
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<SynthConfig>(&text)?
        }
        None => SynthConfig::new(
            a.items.unwrap_or(1000),
            a.users.unwrap_or(500),
            a.dim.unwrap_or(32),
            a.categories.unwrap_or(10),
            a.seed,
        ),
    };
    cfg.seed = a.seed;
    if let Some(v) = a.items {
        cfg.num_items = v;
    }
    if let Some(v) = a.users {
        cfg.num_users = v;
    }
    if let Some(v) = a.dim {
        cfg.dim = v;
    }
    if let Some(v) = a.categories {
        cfg.num_categories = v;
    }
    if let Some(v) = a.enrichment {
        cfg.enrichment_level = v;
    }
    if let Some(v) = a.noise {
        cfg.intra_category_noise = v;
    }
    if let Some(v) = &a.events {
        cfg.events_per_user = [v[0], v[1]];
    }
    if let Some(v) = a.dominant {
        cfg.dominant_transition_prob = v;
    }
    let s = generate_catalog(&cfg)?;
    let log = generate_interactions(&s, &cfg)?;
    std::fs::create_dir_all(&a.out)?;
    let mut outs = Outputs::new();
    save_items(outs.track(&a.out.join(pipeline::CATALOG_FILE)), &s.catalog)?;
    outs.track(&a.out.join(pipeline::EMBEDDING_IDS_FILE));
    save_embeddings(outs.track(&a.out.join(pipeline::EMBEDDINGS_FILE)), &s.embeddings)?;
    save_interactions(outs.track(&a.out.join(pipeline::INTERACTIONS_FILE)), &log)?;
    write_text(
        &outs.track(&a.out.join("synth_config.json")),
        &(serde_json::to_string_pretty(&cfg)? + "\n"),
    )?;
    outs.commit();
    print_json(&json!({
        "items": s.catalog.len(),
        "users": cfg.num_users,
        "events": log.events.len(),
        "dim": cfg.dim,
        "out": a.out,
    }))
}

fn ingest(a: IngestArgs) -> Result<()> {
    let catalog = load_items(&a.items)?;
    let emb = load_embeddings(&a.embeddings)?;
    for id in emb.item_ids() {
        if catalog.get(id).is_none() {
            bail!("embedding row {id:?} has no catalog item");
        }
    }
    let log = load_interactions(&a.interactions)?;
    let filtered = k_core_filter(&log, a.k_core);
    let split = leave_last_out_split(&filtered);
    std::fs::create_dir_all(&a.out)?;
    let mut outs = Outputs::new();
    save_items(outs.track(&a.out.join(pipeline::CATALOG_FILE)), &catalog)?;
    outs.track(&a.out.join(pipeline::EMBEDDING_IDS_FILE));
    save_embeddings(outs.track(&a.out.join(pipeline::EMBEDDINGS_FILE)), &emb)?;
    save_interactions(outs.track(&a.out.join(pipeline::INTERACTIONS_FILE)), &filtered)?;
    outs.commit();
    eprintln!(
        "{} items, {} events ({} after {}-core), {} users split, {} dropped",
        catalog.len(),
        log.events.len(),
        filtered.events.len(),
        a.k_core,
        split.users.len(),
        split.dropped_users
    );
    print_json(&json!({
        "items": catalog.len(),
        "events": log.events.len(),
        "events_after_k_core": filtered.events.len(),
        "users": split.users.len(),
        "dropped_users": split.dropped_users,
    }))
}

fn fit(a: FitArgs) -> Result<()> {
    let emb = load_embeddings(&a.embeddings)?;
    let cfg = RqConfig {
        codebook_sizes: a.sizes.clone(),
        kmeans_max_iters: a.max_iters,
        kmeans_rel_tol: a.tol,
        seed: a.seed,
        normalize: a.normalize,
    };
    let model = RqModel::fit(&emb, &cfg)?;
    let mut outs = Outputs::new();
    rq::save_model(outs.track(&a.out), &model)?;
    if let Some(p) = &a.assign {
        rq::save_assignment(outs.track(p), &assign_all(&model, &emb)?)?;
    }
    outs.commit();
    for s in model.fit_stats() {
        eprintln!(
            "level size {:>5} (requested {:>5}) iterations {:>3} residual mse {:.6}",
            s.size, s.requested_size, s.iterations, s.residual_mse
        );
    }
    print_json(&json!({
        "model_hash": model.hash(),
        "sizes": model.sizes(),
        "fit_stats": model.fit_stats(),
    }))
}

fn encode(a: EncodeArgs) -> Result<()> {
    let model = rq::load_model(&a.model)?;
    let emb = load_embeddings(&a.embeddings)?;
    let assign = assign_all(&model, &emb)?;
    let mut outs = Outputs::new();
    rq::save_assignment(outs.track(&a.out), &assign)?;
    outs.commit();
    print_json(&json!({"items": assign.len(), "model_hash": model.hash()}))
}

fn decode(a: DecodeArgs) -> Result<()> {
    let model = rq::load_model(&a.model)?;
    let mut values = Vec::new();
    for text in &a.sid {
        let sid = parse_sid(text)?;
        values.extend(model.decode(&sid, a.depth)?.into_iter().map(|v| v as f32));
    }
    let set = EmbeddingSet::new(model.dim(), values, a.sid.clone())?;
    let mut outs = Outputs::new();
    outs.track(&sidforge::datamodel::ids_path_for(&a.out));
    save_embeddings(outs.track(&a.out), &set)?;
    outs.commit();
    print_json(&json!({"vectors": a.sid.len(), "dim": model.dim(), "out": a.out}))
}

fn diagnose_cmd(a: DiagnoseArgs) -> Result<()> {
    let (model, assign) = load_pair(&a.model, &a.assignment)?;
    let emb = a.embeddings.as_ref().map(load_embeddings).transpose()?;
    let labels: Option<HashMap<String, String>> = match &a.items {
        Some(p) => {
            if a.seed.is_none() {
                bail!("--seed is required when --items enables the probe");
            }
            Some(load_items(p)?.labels().into_iter().collect())
        }
        None => None,
    };
    let report = diagnose(&model, &assign, emb.as_ref(), labels.as_ref(), a.seed.unwrap_or(0))?;
    eprint!("{}", report.to_table());
    print_json(&report)
}

fn recon(a: ReconArgs) -> Result<()> {
    let model = rq::load_model(&a.model)?;
    let emb = load_embeddings(&a.embeddings)?;
    let curve = reconstruction_curve(&model, &emb, a.max_depth.unwrap_or(model.levels()))?;
    for (h, s) in curve.sim.iter().enumerate() {
        eprintln!("H={:<3} Sim={s:.4}", h + 1);
    }
    print_json(&curve)
}

fn corpus_cmd(a: CorpusArgs) -> Result<()> {
    let (model, assign) = load_pair(&a.model, &a.assignment)?;
    let catalog = load_items(&a.items)?;
    let split = leave_last_out_split(&load_interactions(&a.interactions)?);
    let pools = corpus::build_pools(&split, &catalog, &assign, a.max_history)?;
    let records = corpus::sample_corpus(&pools, a.n, a.seed)?;
    let mut outs = Outputs::new();
    corpus::save_corpus(outs.track(&a.out), &records)?;
    if let Some(p) = &a.chat {
        corpus::save_chat_text(outs.track(p), &records)?;
    }
    if let Some(p) = &a.vocab {
        corpus::save_vocabulary(outs.track(p), &model)?;
    }
    outs.commit();
    let counts = corpus::task_counts(&records);
    let mut per_task = serde_json::Map::new();
    for t in corpus::TaskId::ALL {
        let pool = &pools[t.index()];
        eprintln!(
            "{t} {:<22} available {:>7} skipped {:>6} sampled {:>7}",
            t.name(),
            pool.examples.len(),
            pool.skipped,
            counts[t.index()]
        );
        per_task.insert(
            t.code().into(),
            json!({"available": pool.examples.len(), "skipped": pool.skipped, "sampled": counts[t.index()]}),
        );
    }
    print_json(&json!({"records": records.len(), "tasks": per_task}))
}

fn train(a: TrainArgs) -> Result<()> {
    let (model, assign) = load_pair(&a.model, &a.assignment)?;
    let split = leave_last_out_split(&load_interactions(&a.interactions)?);
    let space = TokenSpace::new(&model.sizes())?;
    let cfg = BaselineConfig {
        kind: a.kind.clone(),
        order: a.order,
        alpha: a.alpha,
        eval: EvalConfig::default(),
    };
    let baseline = train_baseline(&cfg, &split, &assign, &space)?;
    let mut outs = Outputs::new();
    save_baseline(outs.track(&a.out), &baseline)?;
    outs.commit();
    print_json(&json!({"kind": a.kind, "vocab_size": baseline.vocab_size(), "users": split.users.len()}))
}

fn eval(a: EvalArgs) -> Result<()> {
    let (model, assign) = load_pair(&a.model, &a.assignment)?;
    let baseline = load_baseline(&a.baseline)?;
    let space = TokenSpace::new(&model.sizes())?;
    if baseline.space() != &space {
        bail!("baseline was trained for a different codebook shape");
    }
    let split = leave_last_out_split(&load_interactions(&a.interactions)?);
    let trie = build_trie(&assign)?;
    let cfg = EvalConfig {
        ks: a.k.clone(),
        beam_size: a.beam,
        include_validation: !a.exclude_validation,
        constrained: !a.unconstrained,
    };
    let report = evaluate(&baseline, &space, &split, &assign, &trie, &cfg)?;
    let mut outs = Outputs::new();
    if let Some(p) = &a.csv {
        write_text(&outs.track(p), &report.to_csv())?;
    }
    if let Some(p) = &a.ranks {
        write_text(&outs.track(p), &report.ranks_csv())?;
    }
    outs.commit();
    eprint!("{}", report.to_table());
    print_json(&report)
}

fn report(a: ReportArgs) -> Result<()> {
    let read = |name: &str| -> Result<Option<serde_json::Value>> {
        let p = a.dir.join(name);
        if !p.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        Ok(Some(serde_json::from_str(&text)?))
    };
    let manifest = read(pipeline::MANIFEST_FILE)?;
    let diagnostics = read(pipeline::DIAGNOSTICS_FILE)?;
    let metrics = read(pipeline::METRICS_FILE)?;
    if manifest.is_none() && diagnostics.is_none() && metrics.is_none() {
        bail!("{} holds no pipeline outputs", a.dir.display());
    }
    if let Ok(table) = std::fs::read_to_string(a.dir.join(pipeline::DIAGNOSTICS_TABLE_FILE)) {
        eprint!("{table}");
    }
    if let Some(m) = metrics.as_ref().and_then(|m| m.as_object()) {
        for (k, v) in m.iter().filter(|(k, _)| k.contains('@')) {
            eprintln!("{k:<10} {:.4}", v.as_f64().unwrap_or(f64::NAN));
        }
    }
    print_json(&json!({"manifest": manifest, "diagnostics": diagnostics, "metrics": metrics}))
}

/// Exit code for a failing pipeline stage.
fn stage_exit_code(stage: pipeline::Stage) -> u8 {
    10 + stage.number()
}

fn run(a: RunArgs) -> Result<ExitCode> {
    let mut cfg = PipelineConfig::load(&a.config)?;
    if a.workers.is_some() {
        cfg.run.workers = a.workers;
    }
    cfg.run.force |= a.force;
    match pipeline::run_pipeline(&cfg) {
        Ok(report) => {
            for s in &report.stages {
                eprintln!("stage {} {:<12} {:?}", s.stage.number(), s.stage.name(), s.status);
            }
            print_json(&report)?;
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => {
            eprintln!("error: {e}");
            Ok(ExitCode::from(stage_exit_code(e.stage)))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => ingest(a),
        Command::Fit(a) => fit(a),
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(a),
        Command::Diagnose(a) => diagnose_cmd(a),
        Command::ReconCurve(a) => recon(a),
        Command::Corpus(a) => corpus_cmd(a),
        Command::TrainBaseline(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
        Command::Run(a) => return run(a).unwrap_or_else(|e| {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
