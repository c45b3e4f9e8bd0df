//! Python bindings: transcripts, segmentation, the summarization pipeline,
//! review sessions, perplexity scoring and SumSim.

use std::path::PathBuf;
use std::sync::Arc;

use chrono::Utc;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;

use callsum::acceptability::{self, AcceptabilityThresholds, BigramLm};
use callsum::segmentation::{segment_transcript, HashEmbedder, SegmenterConfig};
use callsum::service::{EditAction, EditEvent, ExportFormat, SummarySession};
use callsum::sumsim::{self, ScorerBundle, SumSimWeights, TextNormalization};
use callsum::transcript::{self as tr, SpeakerAliases, TranscriptFormat, TranscriptRecord, TurnRecord};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let raw = serde_json::to_string(value).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (raw,))
}

pub fn parse_action(action: &str) -> Result<EditAction, String> {
    match action.to_ascii_uppercase().as_str() {
        "ACCEPT" => Ok(EditAction::Accept),
        "EDIT" => Ok(EditAction::Edit),
        "DISCARD" => Ok(EditAction::Discard),
        "RESTORE" => Ok(EditAction::Restore),
        other => Err(format!("unknown action {other:?}")),
    }
}

pub fn transcript_from_pairs(id: &str, turns: Vec<(String, String)>) -> Result<tr::Transcript, String> {
    let record = TranscriptRecord {
        id: id.to_string(),
        turns: turns.into_iter().map(|(speaker, text)| TurnRecord { speaker, text, start: None, end: None }).collect(),
        metadata: Default::default(),
    };
    record.into_transcript(&SpeakerAliases::default()).map_err(|e| e.to_string())
}

/// A validated call transcript.
#[pyclass(frozen)]
pub struct Transcript {
    inner: tr::Transcript,
}

#[pymethods]
impl Transcript {
    #[staticmethod]
    fn from_json(raw: &str) -> PyResult<Self> {
        let inner = tr::parse_transcript(raw.as_bytes(), TranscriptFormat::JsonTurns, &SpeakerAliases::default())
            .map_err(value_err)?;
        Ok(Self { inner })
    }

    /// "Label: text" lines.
    #[staticmethod]
    fn from_text(raw: &str) -> PyResult<Self> {
        let inner = tr::parse_transcript(raw.as_bytes(), TranscriptFormat::TwoColumnText, &SpeakerAliases::default())
            .map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (turns, id = ""))]
    fn from_turns(turns: Vec<(String, String)>, id: &str) -> PyResult<Self> {
        Ok(Self { inner: transcript_from_pairs(id, turns).map_err(value_err)? })
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    fn turns(&self) -> Vec<(String, String)> {
        self.inner.turns.iter().map(|t| (t.speaker.label(), t.text.clone())).collect()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

fn spans(seg: &callsum::segmentation::Segmentation) -> Vec<(usize, usize)> {
    seg.segments.iter().map(|s| (s.turn_span.first, s.turn_span.last)).collect()
}

/// Segments with a hashed word embedder; returns inclusive `(first, last)`
/// turn spans.
#[pyfunction]
#[pyo3(signature = (transcript, max_segment_tokens = 512, min_segment_turns = 2, split_penalty = 1.0, embedding_dim = 64, seed = 0))]
fn segment(
    transcript: &Transcript,
    max_segment_tokens: usize,
    min_segment_turns: usize,
    split_penalty: f64,
    embedding_dim: usize,
    seed: u64,
) -> PyResult<Vec<(usize, usize)>> {
    let cfg = SegmenterConfig { max_segment_tokens, min_segment_turns, split_penalty, embedding_dim, strict: false };
    let seg = segment_transcript(&transcript.inner, &HashEmbedder::new(embedding_dim, seed), &cfg).map_err(value_err)?;
    Ok(spans(&seg))
}

#[pyfunction]
fn rouge_l(candidate: &str, reference: &str) -> f64 {
    sumsim::rouge_l_text(candidate, reference, &TextNormalization::default())
}

#[pyfunction]
#[pyo3(signature = (s_r, s_b, s_i = None, s_f = None, alpha = 0.3, beta = 0.3))]
fn compose<'py>(
    py: Python<'py>,
    s_r: f64,
    s_b: f64,
    s_i: Option<f64>,
    s_f: Option<f64>,
    alpha: f64,
    beta: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let w = SumSimWeights::new(alpha, beta).map_err(value_err)?;
    to_py(py, &sumsim::compose(s_r, s_b, s_i, s_f, &w).map_err(value_err)?)
}

/// Full SumSim report with lexical relevance and containment factuality.
#[pyfunction]
#[pyo3(signature = (candidate, reference, source, keywords = Vec::new(), alpha = 0.3, beta = 0.3, factuality = true))]
#[allow(clippy::too_many_arguments)]
fn score<'py>(
    py: Python<'py>,
    candidate: &str,
    reference: &str,
    source: &str,
    keywords: Vec<String>,
    alpha: f64,
    beta: f64,
    factuality: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let w = SumSimWeights::new(alpha, beta).map_err(value_err)?;
    let mut bundle = ScorerBundle::lexical(keywords);
    if !factuality {
        bundle.factuality = None;
    }
    to_py(py, &sumsim::score_pair(candidate, reference, source, &bundle, &w).map_err(value_err)?)
}

#[pyfunction]
fn classify(perplexity: f64, tau_accept: f64, tau_reject: f64) -> PyResult<String> {
    let th = AcceptabilityThresholds::new(tau_accept, tau_reject).map_err(value_err)?;
    let status = acceptability::classify_highlight(perplexity, &th);
    Ok(serde_json::to_value(status).map_err(runtime_err)?.as_str().unwrap_or_default().to_string())
}

/// Bigram summary language model used for acceptability scoring.
#[pyclass(frozen)]
pub struct LanguageModel {
    inner: BigramLm,
}

#[pymethods]
impl LanguageModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: BigramLm::load(&path).map_err(value_err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (summaries, add_k = 0.1, min_count = 1))]
    fn from_summaries(summaries: Vec<String>, add_k: f64, min_count: usize) -> Self {
        let vocab = callsum::summarizer::Vocab::build(summaries.iter().map(String::as_str), min_count);
        Self { inner: BigramLm::from_counts(vocab, summaries.iter().map(String::as_str), add_k) }
    }

    fn perplexity(&self, text: &str) -> PyResult<f64> {
        acceptability::perplexity(text, &self.inner).map_err(value_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(runtime_err)
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab.len()
    }
}

/// Segmenter, summarizer and acceptability model loaded from a config file.
#[pyclass(frozen)]
pub struct Pipeline {
    inner: Arc<callsum::service::Pipeline>,
}

#[pymethods]
impl Pipeline {
    #[new]
    fn new(config_path: PathBuf) -> PyResult<Self> {
        let cfg = callsum::service::PipelineConfig::load(&config_path).map_err(value_err)?;
        Ok(Self { inner: Arc::new(callsum::service::Pipeline::from_config(cfg).map_err(value_err)?) })
    }

    fn segment(&self, transcript: &Transcript) -> PyResult<Vec<(usize, usize)>> {
        Ok(spans(&self.inner.segment(&transcript.inner).map_err(value_err)?))
    }

    #[pyo3(signature = (transcript, session_id = None))]
    fn summarize(&self, transcript: &Transcript, session_id: Option<String>) -> PyResult<Session> {
        let id = session_id.unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
        let inner = self.inner.summarize(&transcript.inner, id, Utc::now()).map_err(runtime_err)?;
        Ok(Session { inner })
    }

    fn perplexity(&self, text: &str) -> PyResult<f64> {
        acceptability::perplexity(text, self.inner.language_model()).map_err(value_err)
    }
}

/// A review session: generated highlights plus the edit log.
#[pyclass]
pub struct Session {
    inner: SummarySession,
}

#[pymethods]
impl Session {
    #[staticmethod]
    fn from_json(raw: &str) -> PyResult<Self> {
        Ok(Self { inner: serde_json::from_str(raw).map_err(value_err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(runtime_err)
    }

    #[getter]
    fn session_id(&self) -> String {
        self.inner.session_id.clone()
    }

    #[getter]
    fn state<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.state)
    }

    fn segments(&self) -> Vec<(usize, usize)> {
        self.inner.segments.iter().map(|s| (s.turn_span.first, s.turn_span.last)).collect()
    }

    #[pyo3(signature = (include_hidden = false))]
    fn highlights<'py>(&self, py: Python<'py>, include_hidden: bool) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.listed(include_hidden))
    }

    #[pyo3(signature = (highlight_id, action, new_text = None, actor = "python"))]
    fn record_edit(&mut self, highlight_id: String, action: &str, new_text: Option<String>, actor: &str) -> PyResult<()> {
        let event = EditEvent {
            highlight_id,
            action: parse_action(action).map_err(value_err)?,
            new_text,
            actor: actor.to_string(),
            timestamp: Utc::now(),
        };
        self.inner.record_edit(event).map_err(value_err)
    }

    fn finalize(&mut self) -> PyResult<()> {
        self.inner.finalize(Utc::now()).map_err(value_err)
    }

    fn replay_matches(&self) -> bool {
        self.inner.replay_matches()
    }

    #[pyo3(signature = (format = "markdown"))]
    fn export(&self, format: &str) -> PyResult<String> {
        let f: ExportFormat = format.parse().map_err(value_err)?;
        Ok(self.inner.export(f))
    }
}

#[pymodule]
fn pycallsum(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Transcript>()?;
    m.add_class::<LanguageModel>()?;
    m.add_class::<Pipeline>()?;
    m.add_class::<Session>()?;
    m.add_function(wrap_pyfunction!(segment, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_l, m)?)?;
    m.add_function(wrap_pyfunction!(compose, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    Ok(())
}
