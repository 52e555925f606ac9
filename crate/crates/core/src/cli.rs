//! Command-line frontend. JSON goes to stdout, diagnostics to stderr.
//! Exit status: 0 success, 1 runtime failure, 2 usage error.

use std::{
    ffi::OsString,
    fs,
    path::{Path, PathBuf},
    process::ExitCode,
    sync::Arc,
    time::Instant,
};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::{
    config::{ProviderKind, ServiceConfig},
    embedding::encode_query,
    error::Error,
    index::{FusionMode, PhraseIndex, ThresholdPolicy},
    metrics::{evaluate, measure_latency},
    model::{load_dataset, load_predictions, write_predictions, Document},
    pipeline::{dataset_knowledge, search_with, Match, SearchOptions},
};

#[derive(Debug, Parser)]
#[command(name = "ktrlf", version, about = "Knowledge-augmented in-document search")]
pub struct Cli {
    /// TOML config file; `KTRLF_*` variables override it, flags override both.
    #[arg(long, global = true, env = "KTRLF_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Link, encode and write the index of one text file.
    Index(IndexArgs),
    /// Query a saved index.
    Search(SearchArgs),
    /// Score a predictions dump, or run the pipeline over a dataset and score it.
    Eval(EvalArgs),
    /// Measure query latency, excluding indexing.
    Bench(BenchArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args, Default)]
pub struct EngineArgs {
    #[arg(long)]
    pub mode: Option<FusionMode>,
    #[arg(long, conflicts_with = "linker_url")]
    pub gazetteer: Option<PathBuf>,
    #[arg(long)]
    pub linker_url: Option<String>,
    #[arg(long)]
    pub min_confidence: Option<f32>,
    #[arg(long, conflicts_with = "knowledge_url")]
    pub knowledge_dir: Option<PathBuf>,
    #[arg(long)]
    pub knowledge_url: Option<String>,
    #[arg(long)]
    pub sentence_limit: Option<usize>,
    #[arg(long, value_parser = parse_provider)]
    pub provider: Option<ProviderKind>,
    #[arg(long)]
    pub provider_url: Option<String>,
    /// Per-token embedding dimension.
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// L2-normalize fused vectors.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct SearchFlags {
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub policy: Option<ThresholdPolicy>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// UTF-8 text file.
    #[arg(long)]
    pub doc: PathBuf,
    /// Defaults to the file stem.
    #[arg(long)]
    pub doc_id: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub query: String,
    #[arg(long)]
    pub score_floor: Option<f64>,
    #[command(flatten)]
    pub search: SearchFlags,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Score this dump instead of running the pipeline.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Index each document's gold mentions instead of linking.
    #[arg(long, conflicts_with = "predictions")]
    pub gold_mentions: bool,
    /// Receives report.json, report.txt and, in pipeline mode, predictions.jsonl.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub search: SearchFlags,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, required_unless_present = "index", conflicts_with = "index")]
    pub doc: Option<PathBuf>,
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// One query per line.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub repeats: usize,
    #[arg(long, default_value_t = 10)]
    pub warmup: usize,
    #[command(flatten)]
    pub search: SearchFlags,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub listen: Option<String>,
    #[command(flatten)]
    pub search: SearchFlags,
    #[command(flatten)]
    pub engine: EngineArgs,
}

fn parse_provider(s: &str) -> Result<ProviderKind, String> {
    match s {
        "ref" => Ok(ProviderKind::Ref),
        "remote" => Ok(ProviderKind::Remote),
        other => Err(format!("unknown provider {other:?} (expected ref or remote)")),
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

impl EngineArgs {
    fn apply(&self, cfg: &mut ServiceConfig) {
        if let Some(v) = self.mode {
            cfg.default_mode = v;
        }
        if let Some(v) = &self.gazetteer {
            cfg.gazetteer = Some(v.clone());
            cfg.linker_url = None;
        }
        if let Some(v) = &self.linker_url {
            cfg.linker_url = Some(v.clone());
            cfg.gazetteer = None;
        }
        if let Some(v) = self.min_confidence {
            cfg.min_confidence = v;
        }
        if let Some(v) = &self.knowledge_dir {
            cfg.knowledge_dir = Some(v.clone());
            cfg.knowledge_url = None;
        }
        if let Some(v) = &self.knowledge_url {
            cfg.knowledge_url = Some(v.clone());
            cfg.knowledge_dir = None;
        }
        if let Some(v) = self.sentence_limit {
            cfg.sentence_limit = v;
        }
        if let Some(v) = self.provider {
            cfg.provider = v;
        }
        if let Some(v) = &self.provider_url {
            cfg.provider_url = Some(v.clone());
        }
        if let Some(v) = self.d {
            cfg.d = v;
        }
        if let Some(v) = &self.cache_dir {
            cfg.cache_dir = v.clone();
        }
        if self.normalize {
            cfg.normalize = true;
        }
    }
}

impl SearchFlags {
    fn apply(&self, cfg: &mut ServiceConfig) {
        if let Some(k) = self.top_k {
            cfg.default_top_k = k;
        }
        if let Some(p) = self.policy {
            cfg.default_policy = p;
        }
    }
}

fn settle(file: Option<&Path>, engine: &EngineArgs, search: Option<&SearchFlags>) -> CliResult<ServiceConfig> {
    let mut cfg = ServiceConfig::load(file)?;
    engine.apply(&mut cfg);
    if let Some(s) = search {
        s.apply(&mut cfg);
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string(v).expect("serializable"));
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Runtime(Error::io(path, e)))
}

fn cmd_index(cfg_file: Option<&Path>, args: IndexArgs) -> CliResult {
    let cfg = settle(cfg_file, &args.engine, None)?;
    let engine = cfg.build_engine()?;
    if engine.linker.is_none() {
        return Err(CliError::Usage("index needs --gazetteer or --linker-url".into()));
    }
    let text = read_text(&args.doc)?;
    let doc_id = match args.doc_id {
        Some(id) => id,
        None => args
            .doc
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| CliError::Usage(format!("cannot derive a doc id from {}", args.doc.display())))?,
    };
    let document = Document::new(doc_id, text)?;
    let started = Instant::now();
    let index = engine.index(&document)?;
    let indexing_ms = started.elapsed().as_secs_f64() * 1e3;
    index.save(&args.out)?;
    print_json(&json!({
        "doc_id": index.doc_id(),
        "mention_count": index.len(),
        "entity_count": index.entity_count(),
        "dims": index.dims(),
        "indexing_ms": indexing_ms,
    }));
    Ok(())
}

fn check_dims(index: &PhraseIndex, d: usize) -> CliResult {
    if index.dims() != 2 * d {
        return Err(CliError::Runtime(Error::Input(format!(
            "index has {} dims but the provider produces {}; pass --d {} or re-index",
            index.dims(),
            2 * d,
            index.dims() / 2
        ))));
    }
    Ok(())
}

fn cmd_search(cfg_file: Option<&Path>, args: SearchArgs) -> CliResult {
    let cfg = settle(cfg_file, &args.engine, Some(&args.search))?;
    let index = PhraseIndex::load(&args.index)?;
    let provider = cfg.build_provider()?;
    check_dims(&index, provider.dim())?;
    let options = SearchOptions {
        score_floor: args.score_floor,
        ..cfg.search_options()
    };
    let q = encode_query(provider.as_ref(), &args.query)?;
    let hits = search_with(&index, &q, options)?;
    print_json(&hits.iter().map(Match::from).collect::<Vec<_>>());
    Ok(())
}

fn cmd_eval(cfg_file: Option<&Path>, args: EvalArgs) -> CliResult {
    let dataset = load_dataset(&args.dataset)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let predictions = match &args.predictions {
        // Pure arithmetic: no config, no provider.
        Some(path) => load_predictions(path)?,
        None => {
            let cfg = settle(cfg_file, &args.engine, Some(&args.search))?;
            let mut engine = cfg.build_engine()?;
            if args.gold_mentions {
                engine.linker = None;
                if cfg.knowledge_dir.is_none() && cfg.knowledge_url.is_none() {
                    engine.knowledge = Arc::new(dataset_knowledge(&dataset).with_sentence_limit(cfg.sentence_limit)?);
                }
            } else if engine.linker.is_none() {
                return Err(CliError::Usage(
                    "eval needs --predictions, --gold-mentions, --gazetteer or --linker-url".into(),
                ));
            }
            let preds = engine.predict_dataset(&dataset)?;
            write_predictions(args.out_dir.join("predictions.jsonl"), &preds)?;
            preds
        }
    };
    let report = evaluate(&dataset, &predictions)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let json_path = args.out_dir.join("report.json");
    fs::write(&json_path, report.to_json()).map_err(|e| Error::io(&json_path, e))?;
    let table = report.to_table();
    let table_path = args.out_dir.join("report.txt");
    fs::write(&table_path, &table).map_err(|e| Error::io(&table_path, e))?;
    eprint!("{table}");
    print_json(&report);
    Ok(())
}

fn cmd_bench(cfg_file: Option<&Path>, args: BenchArgs) -> CliResult {
    let queries: Vec<String> = read_text(&args.queries)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect();
    if queries.is_empty() {
        return Err(CliError::Usage(format!("{} holds no queries", args.queries.display())));
    }
    if args.repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    let cfg = settle(cfg_file, &args.engine, Some(&args.search))?;
    let engine = cfg.build_engine()?;
    let (index, indexing_ms) = match (&args.doc, &args.index) {
        (Some(doc), _) => {
            if engine.linker.is_none() {
                return Err(CliError::Usage("bench --doc needs --gazetteer or --linker-url".into()));
            }
            let stem = doc.file_stem().map_or_else(|| "doc".into(), |s| s.to_string_lossy().into_owned());
            let document = Document::new(stem, read_text(doc)?)?;
            let started = Instant::now();
            let index = engine.index(&document)?;
            (index, Some(started.elapsed().as_secs_f64() * 1e3))
        }
        (None, Some(path)) => (PhraseIndex::load(path)?, None),
        (None, None) => unreachable!("clap requires one of --doc and --index"),
    };
    check_dims(&index, engine.provider.dim())?;
    let stats = measure_latency(
        |q| engine.query(&index, q).map(drop),
        &queries,
        args.warmup,
        args.repeats,
    )?;
    print_json(&json!({
        "indexing_ms": indexing_ms,
        "ms_per_q_mean": stats.ms_per_q_mean,
        "ms_per_q_p50": stats.ms_per_q_p50,
        "n_candidates": index.len(),
        "dims": index.dims(),
        "repeats": stats.samples,
    }));
    Ok(())
}

fn cmd_serve(cfg_file: Option<&Path>, args: ServeArgs) -> CliResult {
    let mut cfg = settle(cfg_file, &args.engine, Some(&args.search))?;
    if let Some(listen) = args.listen {
        cfg.listen_address = listen;
    }
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Config(format!("cannot start runtime: {e}")))?;
    runtime.block_on(crate::service::serve(cfg))?;
    Ok(())
}

pub fn run(cli: Cli) -> CliResult {
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Index(a) => cmd_index(cfg, a),
        Command::Search(a) => cmd_search(cfg, a),
        Command::Eval(a) => cmd_eval(cfg, a),
        Command::Bench(a) => cmd_bench(cfg, a),
        Command::Serve(a) => cmd_serve(cfg, a),
    }
}

/// Parses `args`, runs the command, and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .try_init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
