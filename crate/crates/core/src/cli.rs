//! Command-line front end. JSON goes to stdout, diagnostics to stderr.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::ffi::OsString;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::acceptability::{
    classify_highlight, evaluate_acceptability, fine_tune_lm, load_labeled_csv, perplexity, AcceptabilityThresholds,
    BigramLm, LanguageModelScorer, LmHyper,
};
use crate::pseudo_label::{
    default_templates, label_segments, mix_datasets, Clock, CompletionClient, FixedClock, HttpClientConfig,
    HttpCompletionClient, LabelPolicy, PromptTemplate, PseudoLabelError, RecordingClient, ReplayClient, StubClient,
    SystemClock,
};
use crate::service::http::{serve, AppState};
use crate::service::{FileStore, Pipeline, PipelineConfig, SessionStore};
use crate::summarizer::{
    fine_tune, load_checkpoint, mean_loss, prepare_example, read_training_pairs, save_checkpoint, write_training_pairs,
    DialogModel, DialogModelConfig, TrainHyper, TrainingPair, Vocab,
};
use crate::sumsim::{
    evaluate_corpus, read_corpus, read_keywords, score_pair, write_breakdown_csv, EmbeddingRelevance, LexicalCosine,
    RelevanceScorer, ScorerBundle, SumSimWeights,
};
use crate::transcript::{parse_transcript, SpeakerAliases, Transcript, TranscriptFormat};

#[derive(Debug, Parser)]
#[command(name = "callsum", version, about = "Sales-call segmentation, summarization and review")]
pub struct Cli {
    /// Worker threads for corpus-parallel work (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Log filter for stderr diagnostics, e.g. `info` or `callsum=debug`.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment, summarize and route one transcript into a review session.
    Summarize(SummarizeArgs),
    /// Print the segmentation of a transcript.
    Segment(SegmentArgs),
    /// Score one summary (SumSim) or one highlight (perplexity).
    Score(ScoreArgs),
    /// Evaluate a SumSim corpus or an acceptability benchmark.
    Evaluate(EvaluateArgs),
    /// Generate question-answer pseudo labels for segments.
    PseudoLabel(PseudoLabelArgs),
    /// Fine-tune the dialogue summarizer on training pairs.
    Train(TrainArgs),
    /// Fine-tune the acceptability language model on summaries.
    TrainLm(TrainLmArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Json,
    Text,
}

#[derive(Debug, Args)]
pub struct TranscriptArgs {
    #[arg(long)]
    pub transcript: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Reject speaker labels that are not known aliases.
    #[arg(long)]
    pub strict_speakers: bool,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[command(flatten)]
    pub input: TranscriptArgs,
    /// Pipeline config (TOML or JSON); defaults to the echo stub pipeline.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the session here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also persist the session in the configured store.
    #[arg(long)]
    pub store: bool,
    #[arg(long)]
    pub session_id: Option<String>,
    /// Generation seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[command(flatten)]
    pub input: TranscriptArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    #[arg(long)]
    pub min_turns: Option<usize>,
    #[arg(long)]
    pub split_penalty: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RelevanceArg {
    Lexical,
    Embedding,
}

#[derive(Debug, Args)]
pub struct MetricArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Business keywords, one per line.
    #[arg(long)]
    pub keywords: Option<PathBuf>,
    /// Skip the factuality scorer (its weight drops to 0).
    #[arg(long)]
    pub no_factuality: bool,
    #[arg(long, value_enum, default_value = "lexical")]
    pub relevance: RelevanceArg,
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    #[arg(long)]
    pub tau_accept: Option<f64>,
    #[arg(long)]
    pub tau_reject: Option<f64>,
    /// Take thresholds (and weights) from a pipeline config.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// File holding the candidate summary.
    #[arg(long)]
    pub candidate: PathBuf,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Language model file; scores the candidate's perplexity and status.
    #[arg(long)]
    pub lm: Option<PathBuf>,
    #[command(flatten)]
    pub metric: MetricArgs,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// JSONL of {"candidate","reference","source"} for SumSim.
    #[arg(long, conflicts_with = "labeled")]
    pub corpus: Option<PathBuf>,
    /// CSV of sentence,label for acceptability accuracy (needs --lm).
    #[arg(long, requires = "lm")]
    pub labeled: Option<PathBuf>,
    #[arg(long)]
    pub lm: Option<PathBuf>,
    /// Also write the per-dimension breakdown as CSV.
    #[arg(long)]
    pub csv_out: Option<PathBuf>,
    #[command(flatten)]
    pub metric: MetricArgs,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BackendArg {
    Stub,
    Replay,
    Http,
}

#[derive(Debug, Args)]
pub struct PseudoLabelArgs {
    /// JSONL of segment texts (strings or {"text": ...}).
    #[arg(long)]
    pub segments: Option<PathBuf>,
    /// Transcripts to segment with --config instead of --segments.
    #[arg(long = "transcript")]
    pub transcripts: Vec<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output JSONL of training pairs.
    #[arg(long)]
    pub out: PathBuf,
    /// Questions, one per line; defaults to the built-in set.
    #[arg(long)]
    pub questions: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "stub")]
    pub backend: BackendArg,
    /// Recorded completions for --backend replay.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Save completions for later replay.
    #[arg(long)]
    pub record: Option<PathBuf>,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub api_key_env: Option<String>,
    #[arg(long, default_value_t = 60)]
    pub timeout_secs: u64,
    #[arg(long, default_value_t = 3)]
    pub max_retries: u32,
    #[arg(long)]
    pub requests_per_minute: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    /// Continue an interrupted run; pairs are appended to --out.
    #[arg(long, default_value_t = 0)]
    pub resume_from: usize,
    /// Provenance timestamp (RFC 3339) for reproducible output.
    #[arg(long)]
    pub fixed_time: Option<DateTime<Utc>>,
    /// Print the plan and touch no files.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Human-labeled training pairs (JSONL).
    #[arg(long = "pairs")]
    pub pairs: Vec<PathBuf>,
    /// Pseudo-labeled training pairs (JSONL).
    #[arg(long = "pseudo")]
    pub pseudo: Vec<PathBuf>,
    /// Checkpoint directory to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Start from this checkpoint instead of a fresh toy model.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long)]
    pub no_speaker_embeddings: bool,
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 3e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct TrainLmArgs {
    /// Summaries: one per line, or training-pair JSONL.
    #[arg(long)]
    pub summaries: PathBuf,
    /// Language model file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Held-out summaries for perplexity before/after and calibration.
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured bind address.
    #[arg(long)]
    pub bind: Option<String>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn runtime(msg: impl Into<String>) -> Failure {
    Failure::Runtime(msg.into())
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(err, "{}", e.render());
                return 0;
            }
            let _ = writeln!(err, "{}", e.render());
            let _ = writeln!(err, "{}", Cli::command().render_help());
            return 1;
        }
    };
    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::try_new(&cli.log_level).unwrap_or_else(|_| "warn".into()))
        .try_init();

    let pool = match cli.jobs {
        Some(0) => Err(Failure::Usage("--jobs must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build().map(Some).map_err(|e| runtime(e.to_string())),
        None => Ok(None),
    };
    let result = pool.and_then(|pool| dispatch(cli, Pool(pool), out, err));
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}\n\n{}", Cli::command().render_help());
            1
        }
        Err(Failure::Runtime(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            2
        }
    }
}

/// Runs parallel sections on the `--jobs` pool when one was requested.
struct Pool(Option<rayon::ThreadPool>);

impl Pool {
    fn run<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        match &self.0 {
            Some(p) => p.install(f),
            None => f(),
        }
    }

    fn threads(&self) -> usize {
        self.0.as_ref().map_or_else(rayon::current_num_threads, |p| p.current_num_threads())
    }
}

fn dispatch(cli: Cli, pool: Pool, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    match cli.command {
        Command::Summarize(a) => summarize(a, &pool, out, err),
        Command::Segment(a) => segment(a, out),
        Command::Score(a) => score(a, out),
        Command::Evaluate(a) => evaluate(a, &pool, out, err),
        Command::PseudoLabel(a) => pseudo_label(a, pool.threads(), out, err),
        Command::Train(a) => train(a, &pool, out, err),
        Command::TrainLm(a) => train_lm(a, out, err),
        Command::Serve(a) => serve_cmd(a, err),
    }
}

fn emit(out: &mut dyn Write, v: &serde_json::Value) -> CmdResult {
    serde_json::to_writer_pretty(&mut *out, v)?;
    writeln!(out)?;
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_process_env();
    Ok(cfg)
}

fn read_transcript(a: &TranscriptArgs) -> Result<Transcript, Failure> {
    let raw = std::fs::read(&a.transcript).map_err(|e| runtime(format!("{}: {e}", a.transcript.display())))?;
    let format = match a.format {
        Some(FormatArg::Json) => TranscriptFormat::JsonTurns,
        Some(FormatArg::Text) => TranscriptFormat::TwoColumnText,
        None if a.transcript.extension().is_some_and(|e| e == "json") => TranscriptFormat::JsonTurns,
        None => TranscriptFormat::TwoColumnText,
    };
    let aliases = if a.strict_speakers { SpeakerAliases::strict() } else { SpeakerAliases::default() };
    let mut t = parse_transcript(&raw, format, &aliases)?;
    if t.id.is_empty() {
        t.id = a.transcript.file_stem().and_then(|s| s.to_str()).unwrap_or("transcript").to_string();
    }
    Ok(t)
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn summarize(a: SummarizeArgs, pool: &Pool, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let t = read_transcript(&a.input)?;
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.generation.seed = seed;
    }
    let store_dir = cfg.store_dir.clone();
    let pipeline = Pipeline::from_config(cfg)?;
    let session_id = a.session_id.unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
    let mut session = pool.run(|| pipeline.summarize(&t, session_id, Utc::now()))?;
    for w in &session.warnings {
        writeln!(err, "warning: {w}")?;
    }
    if a.store {
        let store = FileStore::open(&store_dir)?;
        store.put_transcript(&t)?;
        store.create_session(&mut session)?;
    }
    let doc = serde_json::to_value(&session)?;
    match a.out {
        Some(path) => {
            crate::util::atomic_write(&path, serde_json::to_string_pretty(&doc)?.as_bytes())?;
            writeln!(err, "wrote session {} to {}", session.session_id, path.display())?;
            let mut counts = std::collections::BTreeMap::new();
            for h in &session.highlights {
                *counts.entry(serde_json::to_value(h.highlight.status)?.as_str().unwrap_or("").to_string()).or_insert(0usize) += 1;
            }
            emit(out, &json!({
                "session_id": session.session_id,
                "out": path,
                "segments": session.segments.len(),
                "highlights": session.highlights.len(),
                "statuses": counts,
            }))
        }
        None => emit(out, &doc),
    }
}

fn segment(a: SegmentArgs, out: &mut dyn Write) -> CmdResult {
    let t = read_transcript(&a.input)?;
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(v) = a.max_tokens {
        cfg.segmenter.max_segment_tokens = v;
    }
    if let Some(v) = a.min_turns {
        cfg.segmenter.min_segment_turns = v;
    }
    if let Some(v) = a.split_penalty {
        cfg.segmenter.split_penalty = v;
    }
    let pipeline = Pipeline::from_config(cfg)?;
    let seg = pipeline.segment(&t)?;
    emit(out, &json!({
        "transcript_id": t.id,
        "num_turns": t.len(),
        "boundaries": seg.boundaries(),
        "objective": seg.objective,
        "segments": seg.segments,
        "warnings": seg.warnings,
    }))
}

fn weights(m: &MetricArgs, base: SumSimWeights) -> Result<SumSimWeights, Failure> {
    Ok(SumSimWeights::new(m.alpha.unwrap_or(base.alpha), m.beta.unwrap_or(base.beta))?)
}

fn bundle(m: &MetricArgs, cfg: &PipelineConfig) -> Result<ScorerBundle, Failure> {
    let keywords = match &m.keywords {
        Some(p) => read_keywords(p)?,
        None => Vec::new(),
    };
    let mut b = ScorerBundle::lexical(keywords);
    b.relevance = match m.relevance {
        RelevanceArg::Lexical => Box::new(LexicalCosine::default()) as Box<dyn RelevanceScorer>,
        RelevanceArg::Embedding => {
            let p = Pipeline::from_config(cfg.clone())?;
            Box::new(EmbeddingRelevance { embedder: p.embedder() })
        }
    };
    if m.no_factuality {
        b.factuality = None;
    }
    Ok(b)
}

fn thresholds(t: &ThresholdArgs, cfg: &PipelineConfig) -> Result<AcceptabilityThresholds, Failure> {
    Ok(AcceptabilityThresholds::new(
        t.tau_accept.unwrap_or(cfg.thresholds.tau_accept),
        t.tau_reject.unwrap_or(cfg.thresholds.tau_reject),
    )?)
}

fn score(a: ScoreArgs, out: &mut dyn Write) -> CmdResult {
    let cfg = load_config(a.thresholds.config.as_deref())?;
    let candidate = read_text(&a.candidate)?;
    let mut doc = serde_json::Map::new();
    if let Some(r) = &a.reference {
        let reference = read_text(r)?;
        let source = match &a.source {
            Some(s) => read_text(s)?,
            None => reference.clone(),
        };
        let b = bundle(&a.metric, &cfg)?;
        let report = score_pair(candidate.trim(), reference.trim(), source.trim(), &b, &weights(&a.metric, cfg.weights)?)?;
        if a.lm.is_none() {
            return emit(out, &serde_json::to_value(report)?);
        }
        doc.insert("sumsim".into(), serde_json::to_value(report)?);
    }
    match &a.lm {
        Some(lm_path) => {
            let lm = BigramLm::load(lm_path)?;
            let th = thresholds(&a.thresholds, &cfg)?;
            let pp = perplexity(candidate.trim(), &lm)?;
            doc.insert("perplexity".into(), if pp.is_finite() { json!(pp) } else { json!(null) });
            doc.insert("status".into(), serde_json::to_value(classify_highlight(pp, &th))?);
            emit(out, &serde_json::Value::Object(doc))
        }
        None => Err(Failure::Usage("score needs --reference (SumSim) or --lm (perplexity)".into())),
    }
}

fn evaluate(a: EvaluateArgs, pool: &Pool, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let cfg = load_config(a.thresholds.config.as_deref())?;
    if let Some(corpus) = &a.corpus {
        let f = std::fs::File::open(corpus).map_err(|e| runtime(format!("{}: {e}", corpus.display())))?;
        let entries = read_corpus(BufReader::new(f))?;
        let b = bundle(&a.metric, &cfg)?;
        let w = weights(&a.metric, cfg.weights)?;
        let report = pool.run(|| evaluate_corpus(&entries, &b, &w))?;
        if report.failed > 0 {
            writeln!(err, "warning: {} pair(s) failed to score", report.failed)?;
        }
        if let (Some(path), Some(means)) = (&a.csv_out, &report.means) {
            let mut buf = Vec::new();
            write_breakdown_csv(&mut buf, means)?;
            crate::util::atomic_write(path, &buf)?;
        }
        return emit(out, &serde_json::to_value(report)?);
    }
    if let (Some(labeled), Some(lm_path)) = (&a.labeled, &a.lm) {
        let rows = load_labeled_csv(labeled)?;
        let lm = BigramLm::load(lm_path)?;
        let th = thresholds(&a.thresholds, &cfg)?;
        let accuracy = evaluate_acceptability(&lm, &rows, &th)?;
        return emit(out, &json!({"accuracy": accuracy, "sentences": rows.len(), "thresholds": th}));
    }
    Err(Failure::Usage("evaluate needs --corpus, or --labeled with --lm".into()))
}

fn read_segments(path: &Path) -> Result<Vec<String>, Failure> {
    let mut segs = Vec::new();
    for (i, line) in read_text(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value =
            serde_json::from_str(line).map_err(|e| runtime(format!("{} line {}: {e}", path.display(), i + 1)))?;
        let text = match &v {
            serde_json::Value::String(s) => Some(s.as_str()),
            serde_json::Value::Object(o) => o.get("text").or_else(|| o.get("dialogue")).and_then(|t| t.as_str()),
            _ => None,
        };
        let text = text.ok_or_else(|| runtime(format!("{} line {}: expected a string or {{\"text\": ...}}", path.display(), i + 1)))?;
        segs.push(text.to_string());
    }
    Ok(segs)
}

fn pseudo_label(a: PseudoLabelArgs, jobs: usize, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let mut segments = match &a.segments {
        Some(p) => read_segments(p)?,
        None => Vec::new(),
    };
    if !a.transcripts.is_empty() {
        let pipeline = Pipeline::from_config(load_config(a.config.as_deref())?)?;
        for path in &a.transcripts {
            let t = read_transcript(&TranscriptArgs { transcript: path.clone(), format: None, strict_speakers: false })?;
            for s in pipeline.segment(&t)?.segments {
                let lines: Vec<String> =
                    t.turns[s.turn_span.range()].iter().map(|turn| format!("{}: {}", turn.speaker.label(), turn.text)).collect();
                segments.push(lines.join("\n"));
            }
        }
    }
    if segments.is_empty() {
        return Err(Failure::Usage("pseudo-label needs --segments or --transcript".into()));
    }
    let templates = match &a.questions {
        Some(p) => read_text(p)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(PromptTemplate::with_question).collect(),
        None => default_templates(),
    };
    if templates.is_empty() {
        return Err(Failure::Usage("question file is empty".into()));
    }
    let total = segments.len() * templates.len();
    if a.dry_run {
        return emit(out, &json!({
            "dry_run": true,
            "segments": segments.len(),
            "questions": templates.len(),
            "jobs": total.saturating_sub(a.resume_from),
            "resume_from": a.resume_from,
            "backend": format!("{:?}", a.backend).to_lowercase(),
            "out": a.out,
            "record": a.record,
        }));
    }
    let client: Box<dyn CompletionClient> = match a.backend {
        BackendArg::Stub => Box::new(StubClient::first_words(12)),
        BackendArg::Replay => {
            let p = a.replay.as_ref().ok_or_else(|| Failure::Usage("--backend replay needs --replay FILE".into()))?;
            Box::new(ReplayClient::load(p)?)
        }
        BackendArg::Http => {
            let mut cfg = HttpClientConfig { timeout_secs: a.timeout_secs, ..Default::default() };
            if let Some(u) = &a.base_url {
                cfg.base_url = u.clone();
            }
            if let Some(m) = &a.model {
                cfg.model = m.clone();
            }
            if let Some(k) = &a.api_key_env {
                cfg.api_key_env = k.clone();
            }
            Box::new(HttpCompletionClient::new(cfg))
        }
    };
    let recorder = RecordingClient::new(client);
    let policy = LabelPolicy {
        max_retries: a.max_retries,
        requests_per_minute: a.requests_per_minute,
        jobs,
        temperature: a.temperature,
        resume_from: a.resume_from,
        ..Default::default()
    };
    let clock: Box<dyn Clock> = match a.fixed_time {
        Some(t) => Box::new(FixedClock(t)),
        None => Box::new(SystemClock),
    };
    let result = label_segments(&segments, &templates, &recorder, &policy, clock.as_ref());
    if let Some(path) = &a.record {
        let mut buf = Vec::new();
        recorder.write_records(&mut buf)?;
        crate::util::atomic_write(path, &buf)?;
    }
    let (outcome, failure) = match result {
        Ok(o) => (o, None),
        Err(PseudoLabelError::BackendUnavailable { message, partial, resume_cursor }) => (*partial, Some((message, resume_cursor))),
        Err(e) => return Err(e.into()),
    };
    write_pairs(&a.out, &outcome.pairs, a.resume_from > 0)?;
    let summary = json!({
        "pairs": outcome.pairs.len(),
        "dropped_empty": outcome.dropped_empty,
        "retries": outcome.total_retries,
        "out": a.out,
        "complete": failure.is_none(),
        "resume_cursor": failure.as_ref().map(|f| f.1),
    });
    emit(out, &summary)?;
    match failure {
        None => Ok(()),
        Some((message, cursor)) => {
            writeln!(err, "partial output kept; rerun with --resume-from {cursor}")?;
            Err(runtime(format!("completion backend unavailable: {message}")))
        }
    }
}

fn write_pairs(path: &Path, pairs: &[TrainingPair], append: bool) -> CmdResult {
    let mut buf = if append && path.exists() { std::fs::read(path)? } else { Vec::new() };
    if buf.last().is_some_and(|b| *b != b'\n') {
        buf.push(b'\n');
    }
    write_training_pairs(&mut buf, pairs)?;
    crate::util::atomic_write(path, &buf)?;
    Ok(())
}

fn read_pairs(path: &Path) -> Result<Vec<TrainingPair>, Failure> {
    let f = std::fs::File::open(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    Ok(read_training_pairs(BufReader::new(f))?)
}

fn train(a: TrainArgs, pool: &Pool, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    if a.pairs.is_empty() && a.pseudo.is_empty() {
        return Err(Failure::Usage("train needs --pairs and/or --pseudo".into()));
    }
    let mut human = Vec::new();
    for p in &a.pairs {
        human.extend(read_pairs(p)?);
    }
    let mut pseudo = Vec::new();
    for p in &a.pseudo {
        pseudo.extend(read_pairs(p)?);
    }
    let mixed = mix_datasets(human, pseudo, a.seed)?;
    let hyper = TrainHyper { learning_rate: a.lr, epochs: a.epochs, batch_size: a.batch_size, seed: a.seed, ..Default::default() };
    let mut model = match &a.init {
        Some(dir) => load_checkpoint(dir)?,
        None => {
            let vocab = Vocab::build(mixed.pairs.iter().flat_map(|p| [p.dialogue.as_str(), p.summary.as_str()]), a.min_count);
            let config = DialogModelConfig {
                hidden_dim: a.hidden_dim,
                ff_dim: 2 * a.hidden_dim,
                num_heads: a.heads,
                encoder_layers: a.layers,
                decoder_layers: a.layers,
                speaker_turn_embeddings: !a.no_speaker_embeddings,
                ..DialogModelConfig::toy(vocab.len())
            };
            DialogModel::new(config, vocab, a.seed)?
        }
    };
    if a.dry_run {
        return emit(out, &json!({
            "dry_run": true,
            "counts": mixed.counts,
            "examples": mixed.pairs.len(),
            "model": model.config,
            "hyper": hyper,
            "out": a.out,
        }));
    }
    let examples: Vec<_> = mixed.pairs.iter().map(|p| prepare_example(&model, p)).collect();
    writeln!(err, "training on {} examples for {} epochs", examples.len(), a.epochs)?;
    let report = pool.run(|| fine_tune(&mut model, &examples, &hyper))?;
    save_checkpoint(&model, &a.out)?;
    emit(out, &json!({
        "counts": mixed.counts,
        "examples": examples.len(),
        "initial_loss": report.initial_loss,
        "loss_history": report.loss_history,
        "final_loss": pool.run(|| mean_loss(&model, &examples))?,
        "steps": report.steps,
        "out": a.out,
    }))
}

/// Plain lines, or training-pair JSONL (the summary field is used).
fn read_summaries(path: &Path) -> Result<Vec<String>, Failure> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().map(str::trim).enumerate() {
        if line.is_empty() {
            continue;
        }
        if line.starts_with('{') {
            let p: TrainingPair =
                serde_json::from_str(line).map_err(|e| runtime(format!("{} line {}: {e}", path.display(), i + 1)))?;
            out.push(p.summary);
        } else {
            out.push(line.to_string());
        }
    }
    Ok(out)
}

fn mean_pp(lm: &dyn LanguageModelScorer, texts: &[String]) -> Result<Vec<f64>, Failure> {
    texts.iter().map(|t| perplexity(t, lm).map_err(Failure::from)).collect()
}

fn finite_mean(v: &[f64]) -> Option<f64> {
    let f: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    (!f.is_empty()).then(|| f.iter().sum::<f64>() / f.len() as f64)
}

fn train_lm(a: TrainLmArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let summaries = read_summaries(&a.summaries)?;
    let heldout = match &a.heldout {
        Some(p) => read_summaries(p)?,
        None => Vec::new(),
    };
    let mut lm = match &a.init {
        Some(p) => BigramLm::load(p)?,
        None => BigramLm::uniform(Vocab::build(summaries.iter().map(String::as_str), a.min_count)),
    };
    if a.dry_run {
        return emit(out, &json!({
            "dry_run": true,
            "summaries": summaries.len(),
            "heldout": heldout.len(),
            "vocab_size": lm.vocab_size(),
            "epochs": a.epochs,
            "out": a.out,
        }));
    }
    let eval_set = if heldout.is_empty() { &summaries } else { &heldout };
    let before = finite_mean(&mean_pp(&lm, eval_set)?);
    writeln!(err, "fine-tuning on {} summaries", summaries.len())?;
    let losses = fine_tune_lm(&mut lm, &summaries, &LmHyper { learning_rate: a.lr, epochs: a.epochs })?;
    let after_pp = mean_pp(&lm, eval_set)?;
    let thresholds = AcceptabilityThresholds::calibrate(&after_pp)?;
    lm.save(&a.out)?;
    emit(out, &json!({
        "out": a.out,
        "summaries": summaries.len(),
        "loss_history": losses,
        "mean_perplexity_before": before,
        "mean_perplexity_after": finite_mean(&after_pp),
        "calibrated_thresholds": thresholds,
    }))
}

fn serve_cmd(a: ServeArgs, err: &mut dyn Write) -> CmdResult {
    let cfg = load_config(a.config.as_deref())?;
    let bind = a.bind.unwrap_or_else(|| cfg.server.bind.clone());
    let store = FileStore::open(&cfg.store_dir)?;
    let api_token = cfg.server.api_token.clone();
    let state = AppState { pipeline: Arc::new(Pipeline::from_config(cfg)?), store: Arc::new(store), api_token };
    writeln!(err, "serving on {bind}")?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(serve(state, &bind))?;
    Ok(())
}
