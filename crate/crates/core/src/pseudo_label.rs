//! Offline pseudo-label generation: question prompts over segments, answered
//! by a pluggable completion backend.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::{DateTime, SecondsFormat, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::summarizer::{PairSource, TrainingPair};

pub const SEGMENT_SLOT: &str = "{segment}";
pub const QUESTION_SLOT: &str = "{question}";
pub const DEFAULT_LAYOUT: &str = "{segment}\n\nQ: {question}\nA:";

#[derive(Debug, Error)]
pub enum PseudoLabelError {
    #[error("invalid prompt template: {0}")]
    InvalidTemplate(String),
    #[error("segment text is empty")]
    EmptySegment,
    #[error("nothing to label: need at least one segment and one template")]
    NothingToLabel,
    #[error("both datasets are empty")]
    EmptyDatasets,
    #[error("completion backend unavailable at job {resume_cursor}: {message}")]
    BackendUnavailable {
        message: String,
        /// Pairs for every job before `resume_cursor`.
        partial: Box<LabelOutcome>,
        /// Index of the first job (segment-major, template-minor) not done.
        resume_cursor: usize,
    },
    #[error("replay file: {0}")]
    Replay(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub question: String,
    pub layout: String,
    pub stop_sequences: Vec<String>,
    pub max_answer_tokens: usize,
}

impl PromptTemplate {
    pub fn new(
        question: impl Into<String>,
        layout: impl Into<String>,
        stop_sequences: Vec<String>,
        max_answer_tokens: usize,
    ) -> Result<Self, PseudoLabelError> {
        let tpl = Self { question: question.into(), layout: layout.into(), stop_sequences, max_answer_tokens };
        tpl.validate()?;
        Ok(tpl)
    }

    /// Default layout and stops around `question`.
    pub fn with_question(question: impl Into<String>) -> Self {
        Self {
            question: question.into(),
            layout: DEFAULT_LAYOUT.into(),
            stop_sequences: default_stop_sequences(),
            max_answer_tokens: 64,
        }
    }

    pub fn validate(&self) -> Result<(), PseudoLabelError> {
        for slot in [SEGMENT_SLOT, QUESTION_SLOT] {
            let n = self.layout.matches(slot).count();
            if n != 1 {
                return Err(PseudoLabelError::InvalidTemplate(format!("layout must contain {slot} exactly once, found {n}")));
            }
        }
        if self.max_answer_tokens == 0 {
            return Err(PseudoLabelError::InvalidTemplate("max_answer_tokens must be positive".into()));
        }
        Ok(())
    }
}

pub fn default_stop_sequences() -> Vec<String> {
    vec!["\n\n".into(), "Q:".into(), "A:".into()]
}

pub fn default_templates() -> Vec<PromptTemplate> {
    [
        "Summarize this part of the call in one sentence.",
        "What issue did the customer report?",
        "What solution did the agent offer?",
    ]
    .into_iter()
    .map(PromptTemplate::with_question)
    .collect()
}

/// Substitutes both slots in one pass, so slot-like text inside the
/// segment or question is left alone.
pub fn build_prompt(segment_text: &str, tpl: &PromptTemplate) -> Result<String, PseudoLabelError> {
    if segment_text.trim().is_empty() {
        return Err(PseudoLabelError::EmptySegment);
    }
    tpl.validate()?;
    if tpl.question.trim().is_empty() {
        tracing::warn!("prompt template has an empty question");
    }
    let seg_at = tpl.layout.find(SEGMENT_SLOT).expect("validated");
    let q_at = tpl.layout.find(QUESTION_SLOT).expect("validated");
    let mut slots = [(seg_at, SEGMENT_SLOT, segment_text), (q_at, QUESTION_SLOT, tpl.question.as_str())];
    slots.sort_by_key(|s| s.0);
    let mut out = String::with_capacity(tpl.layout.len() + segment_text.len() + tpl.question.len());
    let mut cursor = 0;
    for (at, slot, value) in slots {
        out.push_str(&tpl.layout[cursor..at]);
        out.push_str(value);
        cursor = at + slot.len();
    }
    out.push_str(&tpl.layout[cursor..]);
    Ok(out)
}

/// Cuts `text` at the earliest stop sequence, keeps at most `max_tokens`
/// whitespace tokens and trims.
pub fn apply_stops(text: &str, stops: &[String], max_tokens: usize) -> String {
    let cut = stops.iter().filter(|s| !s.is_empty()).filter_map(|s| text.find(s.as_str())).min().unwrap_or(text.len());
    text[..cut].split_whitespace().take(max_tokens).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: usize,
    pub temperature: f64,
    pub stop: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendMetadata {
    pub backend: String,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompletionError {
    /// Worth retrying (timeouts, rate limiting, server errors).
    #[error("transient backend error: {0}")]
    Transient(String),
    #[error("backend error: {0}")]
    Fatal(String),
}

pub trait CompletionClient: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<String, CompletionError>;
    fn metadata(&self) -> BackendMetadata;
}

type CompleteFn = dyn Fn(&CompletionRequest) -> Result<String, CompletionError> + Send + Sync;

/// Deterministic in-process backend.
pub struct StubClient {
    name: String,
    respond: Box<CompleteFn>,
}

impl StubClient {
    pub fn from_fn(
        name: impl Into<String>,
        f: impl Fn(&CompletionRequest) -> Result<String, CompletionError> + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), respond: Box::new(f) }
    }

    pub fn constant(answer: impl Into<String>) -> Self {
        let answer = answer.into();
        Self::from_fn("constant", move |_| Ok(answer.clone()))
    }

    /// Answers with the first `k` words of the prompt, then continues with a
    /// fake follow-up question that stop sequences must cut off.
    pub fn first_words(k: usize) -> Self {
        Self::from_fn("first-words", move |req| {
            let head: Vec<&str> = req.prompt.split_whitespace().take(k).collect();
            Ok(format!(" {}.\n\nQ: anything else?\nA: no", head.join(" ")))
        })
    }

    /// Fixed answers by exact prompt; unknown prompts get `fallback`.
    pub fn scripted(answers: HashMap<String, String>, fallback: impl Into<String>) -> Self {
        let fallback = fallback.into();
        Self::from_fn("scripted", move |req| Ok(answers.get(&req.prompt).cloned().unwrap_or_else(|| fallback.clone())))
    }

    /// Fails with a transient error on the first `failures` calls, then
    /// delegates to `inner`.
    pub fn flaky(failures: usize, inner: StubClient) -> Self {
        let calls = AtomicUsize::new(0);
        Self::from_fn(format!("flaky-{}", inner.name), move |req| {
            if calls.fetch_add(1, Ordering::SeqCst) < failures {
                Err(CompletionError::Transient("injected failure".into()))
            } else {
                inner.complete(req)
            }
        })
    }
}

impl CompletionClient for StubClient {
    fn complete(&self, req: &CompletionRequest) -> Result<String, CompletionError> {
        (self.respond)(req)
    }

    fn metadata(&self) -> BackendMetadata {
        BackendMetadata { backend: "stub".into(), model: self.name.clone() }
    }
}

/// One recorded completion, keyed by the SHA-256 of its prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub prompt_sha256: String,
    pub completion: String,
}

/// Serves completions recorded earlier; unknown prompts fail permanently.
pub struct ReplayClient {
    records: HashMap<String, String>,
    source: String,
}

impl ReplayClient {
    pub fn from_records(records: impl IntoIterator<Item = ReplayRecord>, source: impl Into<String>) -> Self {
        Self { records: records.into_iter().map(|r| (r.prompt_sha256, r.completion)).collect(), source: source.into() }
    }

    pub fn read<R: BufRead>(reader: R, source: impl Into<String>) -> Result<Self, PseudoLabelError> {
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(
                serde_json::from_str(&line).map_err(|e| PseudoLabelError::Replay(format!("line {}: {e}", i + 1)))?,
            );
        }
        Ok(Self::from_records(records, source))
    }

    pub fn load(path: &Path) -> Result<Self, PseudoLabelError> {
        let f = std::fs::File::open(path).map_err(|e| PseudoLabelError::Replay(format!("{}: {e}", path.display())))?;
        Self::read(std::io::BufReader::new(f), path.display().to_string())
    }
}

impl<C: CompletionClient + ?Sized> CompletionClient for Box<C> {
    fn complete(&self, req: &CompletionRequest) -> Result<String, CompletionError> {
        (**self).complete(req)
    }
    fn metadata(&self) -> BackendMetadata {
        (**self).metadata()
    }
}

impl CompletionClient for ReplayClient {
    fn complete(&self, req: &CompletionRequest) -> Result<String, CompletionError> {
        let key = crate::util::sha256_hex(req.prompt.as_bytes());
        self.records.get(&key).cloned().ok_or_else(|| CompletionError::Fatal(format!("no recorded completion for prompt {key}")))
    }

    fn metadata(&self) -> BackendMetadata {
        BackendMetadata { backend: "replay".into(), model: self.source.clone() }
    }
}

/// Wraps a client and keeps every successful completion for later replay.
pub struct RecordingClient<C> {
    inner: C,
    records: Mutex<Vec<ReplayRecord>>,
}

impl<C: CompletionClient> RecordingClient<C> {
    pub fn new(inner: C) -> Self {
        Self { inner, records: Mutex::new(Vec::new()) }
    }

    /// Records sorted by prompt hash, one per prompt.
    pub fn records(&self) -> Vec<ReplayRecord> {
        let mut r = self.records.lock().expect("recording lock").clone();
        r.sort_by(|a, b| a.prompt_sha256.cmp(&b.prompt_sha256));
        r.dedup_by(|a, b| a.prompt_sha256 == b.prompt_sha256);
        r
    }

    pub fn write_records<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in self.records() {
            serde_json::to_writer(&mut w, &r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl<C: CompletionClient> CompletionClient for RecordingClient<C> {
    fn complete(&self, req: &CompletionRequest) -> Result<String, CompletionError> {
        let out = self.inner.complete(req)?;
        self.records.lock().expect("recording lock").push(ReplayRecord {
            prompt_sha256: crate::util::sha256_hex(req.prompt.as_bytes()),
            completion: out.clone(),
        });
        Ok(out)
    }

    fn metadata(&self) -> BackendMetadata {
        self.inner.metadata()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpClientConfig {
    /// Base URL of an OpenAI-style completions API; `/completions` is appended.
    pub base_url: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub model: String,
    pub timeout_secs: u64,
}

impl Default for HttpClientConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            api_key_env: "CALLSUM_COMPLETION_API_KEY".into(),
            model: "default".into(),
            timeout_secs: 60,
        }
    }
}

pub struct HttpCompletionClient {
    cfg: HttpClientConfig,
    agent: ureq::Agent,
    token: Option<String>,
}

impl HttpCompletionClient {
    pub fn new(cfg: HttpClientConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let token = std::env::var(&cfg.api_key_env).ok().filter(|t| !t.is_empty());
        Self { cfg, agent, token }
    }
}

impl CompletionClient for HttpCompletionClient {
    fn complete(&self, req: &CompletionRequest) -> Result<String, CompletionError> {
        let url = format!("{}/completions", self.cfg.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.cfg.model,
            "prompt": req.prompt,
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
            "stop": req.stop,
        });
        let mut call = self.agent.post(&url);
        if let Some(t) = &self.token {
            call = call.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = call.send_json(&body).map_err(|e| CompletionError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(CompletionError::Transient(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(CompletionError::Fatal(format!("HTTP {status}")));
        }
        let v: serde_json::Value = resp.body_mut().read_json().map_err(|e| CompletionError::Fatal(e.to_string()))?;
        v["choices"][0]["text"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| CompletionError::Fatal("response has no choices[0].text".into()))
    }

    fn metadata(&self) -> BackendMetadata {
        BackendMetadata { backend: "http".into(), model: self.cfg.model.clone() }
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

pub struct FixedClock(pub DateTime<Utc>);

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}

/// Token bucket refilled continuously at `per_minute / 60` tokens a second.
pub struct RateLimiter {
    capacity: f64,
    per_sec: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn per_minute(per_minute: f64) -> Self {
        let capacity = per_minute.max(1.0).min(60.0);
        Self { capacity, per_sec: per_minute / 60.0, state: Mutex::new((capacity, Instant::now())) }
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut st = self.state.lock().expect("rate limiter lock");
                let now = Instant::now();
                st.0 = (st.0 + now.duration_since(st.1).as_secs_f64() * self.per_sec).min(self.capacity);
                st.1 = now;
                if st.0 >= 1.0 {
                    st.0 -= 1.0;
                    return;
                }
                (1.0 - st.0) / self.per_sec
            };
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelPolicy {
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub requests_per_minute: Option<f64>,
    pub jobs: usize,
    pub temperature: f64,
    /// Skip jobs before this index (segment-major, template-minor).
    pub resume_from: usize,
}

impl Default for LabelPolicy {
    fn default() -> Self {
        Self { max_retries: 3, backoff_ms: 250, requests_per_minute: None, jobs: 1, temperature: 0.0, resume_from: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelOutcome {
    pub pairs: Vec<TrainingPair>,
    pub dropped_empty: usize,
    pub total_retries: usize,
}

enum JobResult {
    Answer { summary: String, retries: u32 },
    Empty { retries: u32 },
    Failed(String),
}

fn run_job(client: &dyn CompletionClient, req: &CompletionRequest, tpl: &PromptTemplate, policy: &LabelPolicy, limiter: Option<&RateLimiter>) -> JobResult {
    let mut retries = 0;
    loop {
        if let Some(l) = limiter {
            l.acquire();
        }
        match client.complete(req) {
            Ok(raw) => {
                let summary = apply_stops(&raw, &tpl.stop_sequences, tpl.max_answer_tokens);
                return if summary.is_empty() { JobResult::Empty { retries } } else { JobResult::Answer { summary, retries } };
            }
            Err(CompletionError::Transient(msg)) if retries < policy.max_retries => {
                tracing::warn!(retry = retries + 1, "completion failed: {msg}");
                if policy.backoff_ms > 0 {
                    std::thread::sleep(Duration::from_millis(policy.backoff_ms << retries.min(10)));
                }
                retries += 1;
            }
            Err(e) => return JobResult::Failed(e.to_string()),
        }
    }
}

/// Asks every template's question of every segment. Output is in
/// segment-major, template-minor order regardless of `policy.jobs`.
pub fn label_segments(
    segments: &[String],
    templates: &[PromptTemplate],
    client: &dyn CompletionClient,
    policy: &LabelPolicy,
    clock: &dyn Clock,
) -> Result<LabelOutcome, PseudoLabelError> {
    if segments.is_empty() || templates.is_empty() {
        return Err(PseudoLabelError::NothingToLabel);
    }
    for t in templates {
        t.validate()?;
    }
    let total = segments.len() * templates.len();
    let mut prompts = Vec::with_capacity(total.saturating_sub(policy.resume_from));
    for job in policy.resume_from.min(total)..total {
        let (s, t) = (job / templates.len(), job % templates.len());
        prompts.push((job, s, t, build_prompt(&segments[s], &templates[t])?));
    }
    let limiter = policy.requests_per_minute.map(RateLimiter::per_minute);
    let meta = client.metadata();
    let work = |(job, s, t, prompt): &(usize, usize, usize, String)| {
        let tpl = &templates[*t];
        let req = CompletionRequest {
            prompt: prompt.clone(),
            max_tokens: tpl.max_answer_tokens,
            temperature: policy.temperature,
            stop: tpl.stop_sequences.clone(),
        };
        (*job, *s, *t, run_job(client, &req, tpl, policy, limiter.as_ref()))
    };
    let results: Vec<_> = if policy.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(policy.jobs)
            .build()
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        pool.install(|| prompts.par_iter().map(work).collect())
    } else {
        prompts.iter().map(work).collect()
    };

    let timestamp = clock.now().to_rfc3339_opts(SecondsFormat::Millis, true);
    let mut outcome = LabelOutcome::default();
    for ((job, s, t, result), (_, _, _, prompt)) in results.into_iter().zip(&prompts) {
        match result {
            JobResult::Answer { summary, retries } => {
                outcome.total_retries += retries as usize;
                outcome.pairs.push(TrainingPair {
                    dialogue: segments[s].clone(),
                    summary,
                    source: PairSource::Pseudo,
                    question: Some(templates[t].question.clone()),
                    provenance: Some(json!({
                        "backend": meta.backend,
                        "model": meta.model,
                        "timestamp": timestamp,
                        "retries": retries,
                        "segment_index": s,
                        "template_index": t,
                        "prompt_sha256": crate::util::sha256_hex(prompt.as_bytes()),
                    })),
                    speakers: None,
                });
            }
            JobResult::Empty { retries } => {
                outcome.total_retries += retries as usize;
                outcome.dropped_empty += 1;
            }
            JobResult::Failed(message) => {
                return Err(PseudoLabelError::BackendUnavailable { message, partial: Box::new(outcome), resume_cursor: job });
            }
        }
    }
    if outcome.dropped_empty > 0 {
        tracing::warn!(dropped = outcome.dropped_empty, "dropped empty answers");
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedDataset {
    pub pairs: Vec<TrainingPair>,
    pub counts: BTreeMap<PairSource, usize>,
}

/// Tags each list with its source and shuffles the concatenation with
/// `shuffle_seed`.
pub fn mix_datasets(
    human: Vec<TrainingPair>,
    pseudo: Vec<TrainingPair>,
    shuffle_seed: u64,
) -> Result<MixedDataset, PseudoLabelError> {
    if human.is_empty() && pseudo.is_empty() {
        return Err(PseudoLabelError::EmptyDatasets);
    }
    let mut counts = BTreeMap::new();
    counts.insert(PairSource::Human, human.len());
    counts.insert(PairSource::Pseudo, pseudo.len());
    let mut pairs: Vec<TrainingPair> = human
        .into_iter()
        .map(|p| TrainingPair { source: PairSource::Human, ..p })
        .chain(pseudo.into_iter().map(|p| TrainingPair { source: PairSource::Pseudo, ..p }))
        .collect();
    pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
    Ok(MixedDataset { pairs, counts })
}
