//! Segmentation, summarization and acceptability routing composed into
//! persisted review sessions.

pub mod config;
pub mod http;
pub mod session;
pub mod store;

use std::sync::Arc;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::acceptability::{classify_highlight, perplexity, BigramLm, LanguageModelScorer};
use crate::segmentation::{segment_transcript_with, HashEmbedder, Segmentation, TokenCounter, VectorTable, WordEmbedder};
use crate::summarizer::{
    generate_highlight, load_checkpoint, DialogueInput, DialogueTurn, EchoFirstSentence, HighlightModel, Vocab,
};
use crate::transcript::{Highlight, HighlightOrigin, Transcript, TranscriptRecord};
use crate::util::normalized_tokens;

pub use config::{LmSource, ModelSource, PipelineConfig};
pub use session::{
    EditAction, EditEvent, ExportDocument, ExportFormat, SessionHighlight, SessionState, SummarySession,
};
pub use store::{FileStore, SessionStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stage {
    Config,
    Ingest,
    Segmentation,
    Generation,
    Validation,
    Session,
    Storage,
    Request,
}

/// Error carrying a machine code and the pipeline stage it came from.
#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[error("{stage:?}/{code}: {message}")]
pub struct ServiceError {
    pub code: String,
    pub stage: Stage,
    pub message: String,
}

impl ServiceError {
    pub fn new(code: &str, stage: Stage, message: impl Into<String>) -> Self {
        Self { code: code.to_string(), stage, message: message.into() }
    }
}

struct ModelTokens<'a>(&'a dyn HighlightModel);

impl TokenCounter for ModelTokens<'_> {
    fn count_tokens(&self, text: &str) -> usize {
        self.0.count_tokens(text)
    }
}

/// Loaded components for one configuration.
pub struct Pipeline {
    pub config: PipelineConfig,
    model: Arc<dyn HighlightModel>,
    lm: Arc<dyn LanguageModelScorer>,
    embedder: Arc<dyn WordEmbedder>,
}

impl Pipeline {
    pub fn from_config(config: PipelineConfig) -> Result<Self, ServiceError> {
        config.validate()?;
        let load_err = |e: String| ServiceError::new("MODEL_UNAVAILABLE", Stage::Config, e);
        let (model, vocab): (Arc<dyn HighlightModel>, Vocab) = match &config.model {
            ModelSource::Checkpoint { path } => {
                let m = load_checkpoint(path).map_err(|e| load_err(e.to_string()))?;
                let vocab = m.vocab.clone();
                (Arc::new(m), vocab)
            }
            ModelSource::EchoStub { window } => {
                (Arc::new(EchoFirstSentence { window: *window }), Vocab::build(std::iter::empty::<&str>(), 1))
            }
        };
        let lm: Arc<dyn LanguageModelScorer> = match &config.language_model {
            LmSource::Bigram { path } => Arc::new(BigramLm::load(path).map_err(|e| load_err(e.to_string()))?),
            LmSource::Uniform => Arc::new(BigramLm::uniform(vocab)),
        };
        let embedder: Arc<dyn WordEmbedder> = match &config.embeddings.path {
            Some(p) => Arc::new(VectorTable::load(p).map_err(|e| load_err(e.to_string()))?),
            None => Arc::new(HashEmbedder::new(config.segmenter.embedding_dim, config.embeddings.hash_seed)),
        };
        Ok(Self { config, model, lm, embedder })
    }

    pub fn with_components(
        config: PipelineConfig,
        model: Arc<dyn HighlightModel>,
        lm: Arc<dyn LanguageModelScorer>,
        embedder: Arc<dyn WordEmbedder>,
    ) -> Self {
        Self { config, model, lm, embedder }
    }

    /// Segments `t` with the configured embedder, counting tokens with the
    /// summarizer's tokenizer.
    pub fn segment(&self, t: &Transcript) -> Result<Segmentation, ServiceError> {
        segment_transcript_with(t, self.embedder.as_ref(), &ModelTokens(self.model.as_ref()), &self.config.segmenter)
            .map_err(|e| ServiceError::new("SEGMENTATION_FAILED", Stage::Segmentation, e.to_string()))
    }

    pub fn language_model(&self) -> &dyn LanguageModelScorer {
        self.lm.as_ref()
    }

    pub fn embedder(&self) -> Arc<dyn WordEmbedder> {
        self.embedder.clone()
    }

    /// Runs the pipeline over `t`. Segments are summarized in parallel;
    /// highlights come back in segment order.
    pub fn summarize(&self, t: &Transcript, session_id: String, now: DateTime<Utc>) -> Result<SummarySession, ServiceError> {
        t.validate().map_err(|e| ServiceError::new("INVALID_TRANSCRIPT", Stage::Ingest, e.to_string()))?;
        let seg = self.segment(t)?;
        let mut warnings = seg.warnings.clone();

        let per_segment: Result<Vec<(Vec<SessionHighlight>, bool)>, ServiceError> = seg
            .segments
            .par_iter()
            .map(|s| {
                let input = DialogueInput {
                    turns: t.turns[s.turn_span.range()]
                        .iter()
                        .map(|turn| DialogueTurn { speaker: Some(turn.speaker.id()), text: turn.text.clone() })
                        .collect(),
                };
                let generated = generate_highlight(&input, self.model.as_ref(), &self.config.generation)
                    .map_err(|e| ServiceError::new("GENERATION_FAILED", Stage::Generation, format!("segment {}: {e}", s.index)))?;
                let mut seen = std::collections::HashSet::new();
                let mut out = Vec::new();
                for text in generated.candidates.iter().filter(|c| seen.insert(normalized_tokens(c).join(" "))) {
                    let pp = perplexity(text, self.lm.as_ref()).unwrap_or(f64::INFINITY);
                    if pp.is_nan() {
                        return Err(ServiceError::new("SCORING_FAILED", Stage::Validation, format!("segment {}: NaN perplexity", s.index)));
                    }
                    let highlight = Highlight {
                        segment_index: s.index,
                        text: text.clone(),
                        perplexity: pp,
                        status: classify_highlight(pp, &self.config.thresholds),
                        origin: HighlightOrigin::Model,
                    };
                    out.push(SessionHighlight::new(highlight, out.len()));
                }
                Ok((out, generated.truncated))
            })
            .collect();

        let mut highlights = Vec::new();
        for (i, (hs, truncated)) in per_segment?.into_iter().enumerate() {
            if truncated {
                warnings.push(format!("segment {i} was truncated to the model window"));
            }
            highlights.extend(hs);
        }
        Ok(SummarySession {
            session_id,
            transcript_id: t.id.clone(),
            transcript: TranscriptRecord::from(t),
            segments: seg.segments,
            generated: highlights.clone(),
            highlights,
            edit_log: Vec::new(),
            state: SessionState::Generated,
            version: 0,
            created_at: now,
            finalized_at: None,
            warnings,
        })
    }
}

/// Runs the pipeline with a fresh session id and the current time.
pub fn summarize_call(t: &Transcript, pipeline: &Pipeline) -> Result<SummarySession, ServiceError> {
    pipeline.summarize(t, uuid::Uuid::new_v4().to_string(), Utc::now())
}
