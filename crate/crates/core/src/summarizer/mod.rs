//! Speaker- and turn-aware encoder-decoder summarization.
//!
//! The encoder input at every position is the sum of four embeddings: token,
//! absolute position, speaker and turn position. Speaker and turn indices are
//! recovered from the turn separator token: each separator closes the turn it
//! follows, and the next token opens a new turn.

mod checkpoint;
mod model;
mod stub;
pub mod tokenizer;
mod train;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use model::{DialogModel, DialogModelConfig, EncoderInput, SpeakerTurnInit};
pub use stub::EchoFirstSentence;
pub use tokenizer::Vocab;
pub use train::{
    fine_tune, mean_loss, prepare_example, read_training_pairs, write_training_pairs, PairSource, TrainHyper,
    TrainReport, TrainingExample, TrainingPair,
};

#[derive(Debug, Error)]
pub enum SummarizerError {
    #[error("{table} index {index} out of range for table with {rows} rows")]
    IndexOutOfRange { table: &'static str, index: usize, rows: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("model unavailable: {0}")]
    ModelUnavailable(String),
    #[error("generation produced an empty summary")]
    EmptyGeneration,
    #[error("empty input")]
    EmptyInput,
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    DivergenceDetected { epoch: usize, loss: f64 },
    #[error("no training pairs")]
    NoTrainingData,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-token speaker and turn ids for one encoder sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnIndices {
    pub speaker_ids: Vec<usize>,
    pub turn_ids: Vec<usize>,
    /// The sequence had more turns than `max_turns`; later turns share the
    /// last turn row.
    pub clamped: bool,
}

/// Infers speaker and turn ids from separator positions, assuming speakers
/// strictly alternate (`speaker = turn mod num_speakers`).
///
/// Turn ids start at 0 and increase by one on the token after each
/// separator; the separator keeps the id of the turn it terminates.
pub fn infer_speaker_turn_indices(
    token_ids: &[u32],
    sep_token_id: u32,
    num_speakers: usize,
    max_turns: usize,
) -> TurnIndices {
    let raw = raw_turn_ids(token_ids, sep_token_id);
    let speaker_ids = raw.iter().map(|t| t % num_speakers.max(1)).collect();
    let (turn_ids, clamped) = clamp_turns(raw, max_turns);
    TurnIndices { speaker_ids, turn_ids, clamped }
}

/// Like [`infer_speaker_turn_indices`] but with known per-turn speakers.
/// Turns beyond `turn_speakers` reuse the modular rule.
pub fn assign_turn_indices(
    token_ids: &[u32],
    sep_token_id: u32,
    turn_speakers: &[usize],
    num_speakers: usize,
    max_turns: usize,
) -> TurnIndices {
    let raw = raw_turn_ids(token_ids, sep_token_id);
    let speaker_ids = raw
        .iter()
        .map(|&t| turn_speakers.get(t).copied().unwrap_or(t % num_speakers.max(1)).min(num_speakers - 1))
        .collect();
    let (turn_ids, clamped) = clamp_turns(raw, max_turns);
    TurnIndices { speaker_ids, turn_ids, clamped }
}

fn raw_turn_ids(token_ids: &[u32], sep: u32) -> Vec<usize> {
    let mut turn = 0;
    let mut prev_was_sep = false;
    token_ids
        .iter()
        .map(|&tok| {
            if prev_was_sep {
                turn += 1;
            }
            prev_was_sep = tok == sep;
            turn
        })
        .collect()
}

fn clamp_turns(raw: Vec<usize>, max_turns: usize) -> (Vec<usize>, bool) {
    let limit = max_turns.saturating_sub(1);
    let clamped = raw.iter().any(|&t| t > limit);
    if clamped {
        tracing::warn!(max_turns, "turn count exceeds turn table; clamping to the last row");
    }
    (raw.into_iter().map(|t| t.min(limit)).collect(), clamped)
}

/// A padded batch of encoder inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogInputBatch {
    pub token_ids: Array2<usize>,
    pub speaker_ids: Array2<usize>,
    pub turn_ids: Array2<usize>,
    pub attention_mask: Array2<bool>,
}

impl DialogInputBatch {
    /// Pads `rows` to a common length with token 0 and a false mask.
    pub fn from_rows(rows: &[(Vec<usize>, Vec<usize>, Vec<usize>)]) -> Result<Self, SummarizerError> {
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let shape = (rows.len(), width);
        let mut batch = DialogInputBatch {
            token_ids: Array2::zeros(shape),
            speaker_ids: Array2::zeros(shape),
            turn_ids: Array2::zeros(shape),
            attention_mask: Array2::from_elem(shape, false),
        };
        for (b, (tok, spk, turn)) in rows.iter().enumerate() {
            if tok.len() != spk.len() || tok.len() != turn.len() {
                return Err(SummarizerError::Shape(format!("row {b} id lists differ in length")));
            }
            for s in 0..tok.len() {
                batch.token_ids[[b, s]] = tok[s];
                batch.speaker_ids[[b, s]] = spk[s];
                batch.turn_ids[[b, s]] = turn[s];
                batch.attention_mask[[b, s]] = true;
            }
        }
        batch.validate()?;
        Ok(batch)
    }

    pub fn validate(&self) -> Result<(), SummarizerError> {
        let shape = self.token_ids.shape();
        if self.speaker_ids.shape() != shape || self.turn_ids.shape() != shape || self.attention_mask.shape() != shape
        {
            return Err(SummarizerError::Shape("id matrices and mask must share a shape".into()));
        }
        for (b, row) in self.turn_ids.rows().into_iter().enumerate() {
            let mut prev = 0;
            for (s, &t) in row.iter().enumerate() {
                if !self.attention_mask[[b, s]] {
                    continue;
                }
                if t < prev {
                    return Err(SummarizerError::Shape(format!("turn ids decrease in row {b} at {s}")));
                }
                prev = t;
            }
        }
        Ok(())
    }
}

/// The four embedding tables summed into the encoder input.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTables {
    pub token: Array2<f64>,
    pub position: Array2<f64>,
    pub speaker: Array2<f64>,
    pub turn: Array2<f64>,
}

impl EmbeddingTables {
    pub fn dim(&self) -> usize {
        self.token.ncols()
    }

    pub fn validate(&self) -> Result<(), SummarizerError> {
        let d = self.token.ncols();
        if [&self.position, &self.speaker, &self.turn].iter().any(|t| t.ncols() != d) {
            return Err(SummarizerError::Shape("embedding tables differ in width".into()));
        }
        Ok(())
    }
}

fn check_index(table: &'static str, index: usize, t: &Array2<f64>) -> Result<(), SummarizerError> {
    if index >= t.nrows() {
        return Err(SummarizerError::IndexOutOfRange { table, index, rows: t.nrows() });
    }
    Ok(())
}

/// `out[b, s] = token[tok[b,s]] + position[s] + speaker[spk[b,s]] + turn[turn[b,s]]`
pub fn compose_input_embeddings(
    batch: &DialogInputBatch,
    tables: &EmbeddingTables,
) -> Result<Array3<f64>, SummarizerError> {
    batch.validate()?;
    tables.validate()?;
    let (nb, ns) = batch.token_ids.dim();
    let d = tables.dim();
    let mut out = Array3::zeros((nb, ns, d));
    for b in 0..nb {
        for s in 0..ns {
            let (tok, spk, turn) = (batch.token_ids[[b, s]], batch.speaker_ids[[b, s]], batch.turn_ids[[b, s]]);
            check_index("token", tok, &tables.token)?;
            check_index("position", s, &tables.position)?;
            check_index("speaker", spk, &tables.speaker)?;
            check_index("turn", turn, &tables.turn)?;
            let mut cell = out.slice_mut(ndarray::s![b, s, ..]);
            cell += &tables.token.row(tok);
            cell += &tables.position.row(s);
            cell += &tables.speaker.row(spk);
            cell += &tables.turn.row(turn);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub max_summary_tokens: usize,
    pub num_beams: usize,
    pub length_penalty: f64,
    /// Distinct candidates to return per input (best first).
    pub num_candidates: usize,
    /// Sampling temperature; 0 means deterministic beam/greedy search.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self { max_summary_tokens: 32, num_beams: 4, length_penalty: 1.0, num_candidates: 1, temperature: 0.0, seed: 0 }
    }
}

impl GenerationParams {
    pub fn greedy(&self) -> Self {
        Self { num_beams: 1, temperature: 0.0, num_candidates: 1, ..self.clone() }
    }
}

/// One dialogue turn handed to a summarizer; `speaker` is `None` when the
/// role is unknown and should be inferred from turn order.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogueTurn {
    pub speaker: Option<usize>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DialogueInput {
    pub turns: Vec<DialogueTurn>,
}

impl DialogueInput {
    /// Splits text rendered with `sep` back into turns of unknown speaker.
    pub fn from_rendered(text: &str, sep: &str) -> Self {
        let turns = text
            .split(sep)
            .map(|t| t.trim())
            .filter(|t| !t.is_empty())
            .map(|t| DialogueTurn { speaker: None, text: t.to_string() })
            .collect();
        Self { turns }
    }

    pub fn is_empty(&self) -> bool {
        self.turns.iter().all(|t| t.text.trim().is_empty())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// Candidate summaries, best first; may be empty text.
    pub candidates: Vec<String>,
    /// Input exceeded the model window and was cut.
    pub truncated: bool,
}

/// The narrow interface the pipeline needs from a summarization backend.
pub trait HighlightModel: Send + Sync {
    /// Maximum input length in the model's own tokens.
    fn window(&self) -> usize;
    fn count_tokens(&self, text: &str) -> usize;
    fn generate(&self, input: &DialogueInput, params: &GenerationParams) -> Result<Generation, SummarizerError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedHighlight {
    pub text: String,
    pub candidates: Vec<String>,
    pub truncated: bool,
}

/// Summarizes one segment, retrying with greedy decoding if the first
/// attempt yields nothing.
pub fn generate_highlight(
    input: &DialogueInput,
    model: &dyn HighlightModel,
    params: &GenerationParams,
) -> Result<GeneratedHighlight, SummarizerError> {
    if input.is_empty() {
        return Err(SummarizerError::EmptyInput);
    }
    let mut generation = model.generate(input, params)?;
    let mut candidates = non_empty(&generation.candidates);
    if candidates.is_empty() {
        tracing::warn!("empty generation; retrying with greedy decoding");
        generation = model.generate(input, &params.greedy())?;
        candidates = non_empty(&generation.candidates);
    }
    if candidates.is_empty() {
        return Err(SummarizerError::EmptyGeneration);
    }
    if generation.truncated {
        tracing::warn!(window = model.window(), "segment exceeded the model window and was truncated");
    }
    Ok(GeneratedHighlight { text: candidates[0].clone(), candidates, truncated: generation.truncated })
}

/// Text convenience wrapper over [`generate_highlight`].
pub fn generate_highlight_from_text(
    segment_text: &str,
    sep: &str,
    model: &dyn HighlightModel,
    params: &GenerationParams,
) -> Result<GeneratedHighlight, SummarizerError> {
    generate_highlight(&DialogueInput::from_rendered(segment_text, sep), model, params)
}

fn non_empty(c: &[String]) -> Vec<String> {
    c.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SEP_ID: u32 = 99;

    #[test]
    fn indices_without_separator() {
        let r = infer_speaker_turn_indices(&[10, 11, 12], SEP_ID, 2, 8);
        assert_eq!(r.speaker_ids, vec![0, 0, 0]);
        assert_eq!(r.turn_ids, vec![0, 0, 0]);
        assert!(!r.clamped);
    }

    #[test]
    fn indices_two_speakers() {
        let r = infer_speaker_turn_indices(&[10, SEP_ID, 11, SEP_ID, 12], SEP_ID, 2, 8);
        assert_eq!(r.turn_ids, vec![0, 0, 1, 1, 2]);
        assert_eq!(r.speaker_ids, vec![0, 0, 1, 1, 0]);
    }

    #[test]
    fn indices_three_speakers() {
        let toks = [1, SEP_ID, 2, SEP_ID, 3, SEP_ID, 4];
        let r = infer_speaker_turn_indices(&toks, SEP_ID, 3, 8);
        assert_eq!(r.speaker_ids, vec![0, 0, 1, 1, 2, 2, 0]);
    }

    #[test]
    fn turn_overflow_clamps() {
        let toks = [1, SEP_ID, 2, SEP_ID, 3, SEP_ID, 4];
        let r = infer_speaker_turn_indices(&toks, SEP_ID, 2, 2);
        assert_eq!(r.turn_ids, vec![0, 0, 1, 1, 1, 1, 1]);
        assert!(r.clamped);
        // speakers still alternate on the unclamped turn count
        assert_eq!(r.speaker_ids, vec![0, 0, 1, 1, 0, 0, 1]);
    }

    #[test]
    fn explicit_speakers() {
        let r = assign_turn_indices(&[1, SEP_ID, 2, SEP_ID, 3], SEP_ID, &[1, 1, 0], 2, 8);
        assert_eq!(r.speaker_ids, vec![1, 1, 1, 1, 0]);
    }

    fn tables(d: usize) -> EmbeddingTables {
        EmbeddingTables {
            token: Array2::zeros((4, d)),
            position: Array2::zeros((6, d)),
            speaker: Array2::zeros((2, d)),
            turn: Array2::zeros((3, d)),
        }
    }

    #[test]
    fn compose_elementwise_sum() {
        let mut t = tables(2);
        t.token.row_mut(1).assign(&ndarray::arr1(&[1.0, 0.0]));
        t.position.row_mut(0).assign(&ndarray::arr1(&[0.0, 1.0]));
        t.speaker.row_mut(1).assign(&ndarray::arr1(&[10.0, 0.0]));
        t.turn.row_mut(2).assign(&ndarray::arr1(&[0.0, 10.0]));
        let batch = DialogInputBatch::from_rows(&[(vec![1], vec![1], vec![2])]).unwrap();
        let out = compose_input_embeddings(&batch, &t).unwrap();
        assert_eq!(out.slice(ndarray::s![0, 0, ..]).to_vec(), vec![11.0, 11.0]);
    }

    #[test]
    fn compose_bounds() {
        let batch = DialogInputBatch::from_rows(&[(vec![1, 1], vec![0, 0], vec![0, 3])]).unwrap();
        assert!(matches!(
            compose_input_embeddings(&batch, &tables(2)),
            Err(SummarizerError::IndexOutOfRange { table: "turn", index: 3, rows: 3 })
        ));
        let long = DialogInputBatch::from_rows(&[(vec![0; 7], vec![0; 7], vec![0; 7])]).unwrap();
        assert!(matches!(
            compose_input_embeddings(&long, &tables(2)),
            Err(SummarizerError::IndexOutOfRange { table: "position", .. })
        ));
    }

    #[test]
    fn batch_rejects_decreasing_turns() {
        assert!(DialogInputBatch::from_rows(&[(vec![1, 1], vec![0, 0], vec![1, 0])]).is_err());
        assert!(DialogInputBatch::from_rows(&[(vec![1, 1], vec![0], vec![0, 0])]).is_err());
    }

    #[test]
    fn echo_stub_contract() {
        let stub = EchoFirstSentence::default();
        let params = GenerationParams::default();
        let h = generate_highlight_from_text(
            "My phone broke yesterday. It will not charge. <sep> I can help.",
            "<sep>",
            &stub,
            &params,
        )
        .unwrap();
        assert_eq!(h.text, "My phone broke yesterday.");
        assert!(!h.truncated);
        let again = generate_highlight_from_text(
            "My phone broke yesterday. It will not charge. <sep> I can help.",
            "<sep>",
            &stub,
            &params,
        )
        .unwrap();
        assert_eq!(h, again);
    }

    #[test]
    fn over_window_input_is_truncated_and_flagged() {
        let stub = EchoFirstSentence { window: 20 };
        let words: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
        let h = generate_highlight_from_text(&words.join(" "), "<sep>", &stub, &GenerationParams::default()).unwrap();
        assert!(h.truncated);
        assert_eq!(h.text.split_whitespace().count(), 20);
    }

    #[test]
    fn empty_input_is_rejected() {
        let stub = EchoFirstSentence::default();
        assert!(matches!(
            generate_highlight_from_text("  ", "<sep>", &stub, &GenerationParams::default()),
            Err(SummarizerError::EmptyInput)
        ));
    }
}
