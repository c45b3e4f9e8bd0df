//! Embedding-based transcript segmentation.
//!
//! Each turn is mapped to the normalized mean of its word vectors. A
//! segmentation is scored as the sum, over segments, of the norm of the summed
//! turn vectors, minus a linear penalty per split. Topically aligned turns add
//! up to long vectors, so the optimum groups them together. The optimum over
//! all turn-boundary subsets is found exactly by dynamic programming, subject
//! to a per-segment token budget.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transcript::{Segment, Transcript, Turn, TurnSpan};
use crate::util::{normalized_tokens, whitespace_token_count};

#[derive(Debug, Error, PartialEq)]
pub enum SegmentationError {
    #[error("invalid boundary set {0:?}")]
    InvalidBoundary(Vec<usize>),
    #[error("turn {turn} has {tokens} tokens, more than the segment budget of {max}")]
    OversizedTurn { turn: usize, tokens: usize, max: usize },
    #[error("invalid segmenter config: {0}")]
    InvalidConfig(String),
    #[error("transcript has no turns")]
    EmptyTranscript,
    #[error("vector file: {0}")]
    VectorFile(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SegmenterConfig {
    pub max_segment_tokens: usize,
    pub min_segment_turns: usize,
    pub embedding_dim: usize,
    pub split_penalty: f64,
    /// Fail on a turn that alone exceeds the budget instead of isolating it.
    pub strict: bool,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            max_segment_tokens: 512,
            min_segment_turns: 2,
            embedding_dim: 64,
            split_penalty: 0.0,
            strict: false,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<(), SegmentationError> {
        if self.max_segment_tokens == 0 {
            return Err(SegmentationError::InvalidConfig("max_segment_tokens must be > 0".into()));
        }
        if self.min_segment_turns == 0 {
            return Err(SegmentationError::InvalidConfig("min_segment_turns must be >= 1".into()));
        }
        if !(self.split_penalty >= 0.0) {
            return Err(SegmentationError::InvalidConfig("split_penalty must be >= 0".into()));
        }
        Ok(())
    }
}

/// Maps a word to a fixed-size vector. `None` means out of vocabulary.
pub trait WordEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, token: &str) -> Option<Vec<f64>>;
}

/// Deterministic pseudo-embeddings derived from a hash of the token.
/// Every token is in vocabulary.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }
}

impl WordEmbedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, token: &str) -> Option<Vec<f64>> {
        let digest = crate::util::sha256_hex(format!("{}\u{0}{token}", self.seed).as_bytes());
        let seed = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Some((0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect())
    }
}

/// Explicit token → vector table, e.g. loaded from a pretrained vector file.
#[derive(Debug, Clone, Default)]
pub struct VectorTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl VectorTable {
    pub fn new(dim: usize) -> Self {
        Self { dim, vectors: HashMap::new() }
    }

    pub fn insert(&mut self, token: impl Into<String>, v: Vec<f64>) {
        assert_eq!(v.len(), self.dim, "vector dimensionality");
        self.vectors.insert(token.into(), v);
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Reads the text format `token v1 v2 ... vd`, one token per line, with
    /// an optional leading `count dim` header line.
    pub fn read<R: BufRead>(reader: R) -> Result<Self, SegmentationError> {
        let mut table: Option<VectorTable> = None;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| SegmentationError::VectorFile(e.to_string()))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if lineno == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
                let dim = fields[1].parse().unwrap();
                table = Some(VectorTable::new(dim));
                continue;
            }
            let values = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| SegmentationError::VectorFile(format!("line {}: {e}", lineno + 1)))?;
            let t = table.get_or_insert_with(|| VectorTable::new(values.len()));
            if values.len() != t.dim {
                return Err(SegmentationError::VectorFile(format!(
                    "line {}: expected {} values, found {}",
                    lineno + 1,
                    t.dim,
                    values.len()
                )));
            }
            t.vectors.insert(fields[0].to_string(), values);
        }
        table.ok_or_else(|| SegmentationError::VectorFile("no vectors".into()))
    }

    pub fn load(path: &Path) -> Result<Self, SegmentationError> {
        let f = std::fs::File::open(path)
            .map_err(|e| SegmentationError::VectorFile(format!("{}: {e}", path.display())))?;
        Self::read(std::io::BufReader::new(f))
    }
}

impl WordEmbedder for VectorTable {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, token: &str) -> Option<Vec<f64>> {
        self.vectors.get(token).cloned()
    }
}

/// Counts tokens against the segment budget.
pub trait TokenCounter {
    fn count_tokens(&self, text: &str) -> usize;
}

pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn count_tokens(&self, text: &str) -> usize {
        whitespace_token_count(text)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// L2-normalized mean of the turn's word vectors. All-OOV turns give the
/// zero vector.
pub fn turn_vector(turn: &Turn, embedder: &dyn WordEmbedder) -> Vec<f64> {
    text_vector(&turn.text, embedder)
}

pub fn text_vector(text: &str, embedder: &dyn WordEmbedder) -> Vec<f64> {
    let mut sum = vec![0.0; embedder.dim()];
    let mut found = 0usize;
    for tok in normalized_tokens(text) {
        if let Some(v) = embedder.embed(&tok) {
            for (s, x) in sum.iter_mut().zip(&v) {
                *s += x;
            }
            found += 1;
        }
    }
    if found == 0 {
        return sum;
    }
    let n = norm(&sum);
    if n == 0.0 {
        return sum;
    }
    // normalizing the sum is the same as normalizing the mean
    sum.iter_mut().for_each(|x| *x /= n);
    sum
}

/// Sum of per-segment summed-vector norms minus `split_penalty` per split.
///
/// `boundaries` are the indices of the first turn of every segment after the
/// first; they must be strictly increasing and lie in `1..n`.
pub fn segmentation_objective(
    turn_vectors: &[Vec<f64>],
    boundaries: &[usize],
    split_penalty: f64,
) -> Result<f64, SegmentationError> {
    let n = turn_vectors.len();
    let valid = boundaries.windows(2).all(|w| w[0] < w[1])
        && boundaries.iter().all(|&b| b >= 1 && b < n);
    if !valid {
        return Err(SegmentationError::InvalidBoundary(boundaries.to_vec()));
    }
    let mut starts = vec![0];
    starts.extend_from_slice(boundaries);
    let mut ends = boundaries.to_vec();
    ends.push(n);
    let total: f64 = starts.iter().zip(&ends).map(|(&s, &e)| segment_norm(&turn_vectors[s..e])).sum();
    Ok(total - split_penalty * boundaries.len() as f64)
}

fn segment_norm(vectors: &[Vec<f64>]) -> f64 {
    let dim = vectors.first().map_or(0, Vec::len);
    let mut sum = vec![0.0; dim];
    for v in vectors {
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    norm(&sum)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub segments: Vec<Segment>,
    pub objective: f64,
    pub warnings: Vec<String>,
}

impl Segmentation {
    pub fn boundaries(&self) -> Vec<usize> {
        self.segments.iter().skip(1).map(|s| s.turn_span.first).collect()
    }
}

const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
struct Candidate {
    violations: usize,
    score: f64,
    boundaries: Vec<usize>,
}

impl Candidate {
    /// Fewer min-length violations, then higher score, then fewer segments,
    /// then lexicographically earlier boundaries.
    fn better_than(&self, other: &Candidate) -> bool {
        if self.violations != other.violations {
            return self.violations < other.violations;
        }
        let tol = TIE_EPS * self.score.abs().max(other.score.abs()).max(1.0);
        if (self.score - other.score).abs() > tol {
            return self.score > other.score;
        }
        if self.boundaries.len() != other.boundaries.len() {
            return self.boundaries.len() < other.boundaries.len();
        }
        self.boundaries < other.boundaries
    }
}

/// Exact DP over boundary positions using precomputed turn vectors and
/// per-turn token counts.
pub fn optimal_segmentation(
    turn_vectors: &[Vec<f64>],
    turn_tokens: &[usize],
    cfg: &SegmenterConfig,
) -> Result<(Vec<usize>, f64, Vec<String>), SegmentationError> {
    cfg.validate()?;
    let n = turn_vectors.len();
    if n == 0 {
        return Err(SegmentationError::EmptyTranscript);
    }
    assert_eq!(turn_tokens.len(), n);
    let mut warnings = Vec::new();
    for (i, &tokens) in turn_tokens.iter().enumerate() {
        if tokens > cfg.max_segment_tokens {
            if cfg.strict {
                return Err(SegmentationError::OversizedTurn { turn: i, tokens, max: cfg.max_segment_tokens });
            }
            warnings.push(format!(
                "turn {i} has {tokens} tokens (budget {}); isolated in its own segment",
                cfg.max_segment_tokens
            ));
        }
    }

    let dim = turn_vectors[0].len();
    // best[j]: best partition of turns 0..j
    let mut best: Vec<Option<Candidate>> = vec![None; n + 1];
    best[0] = Some(Candidate { violations: 0, score: 0.0, boundaries: Vec::new() });
    for j in 1..=n {
        let mut sum = vec![0.0; dim];
        let mut tokens = 0usize;
        let mut winner: Option<Candidate> = None;
        // grow the last segment [i, j) leftwards
        for i in (0..j).rev() {
            for (s, x) in sum.iter_mut().zip(&turn_vectors[i]) {
                *s += x;
            }
            tokens += turn_tokens[i];
            let len = j - i;
            if len > 1 && tokens > cfg.max_segment_tokens {
                break;
            }
            let Some(prefix) = &best[i] else { continue };
            let mut boundaries = prefix.boundaries.clone();
            let mut score = prefix.score + norm(&sum);
            if i > 0 {
                boundaries.push(i);
                score -= cfg.split_penalty;
            }
            let cand = Candidate {
                violations: prefix.violations + usize::from(len < cfg.min_segment_turns),
                score,
                boundaries,
            };
            if winner.as_ref().is_none_or(|w| cand.better_than(w)) {
                winner = Some(cand);
            }
        }
        best[j] = winner;
    }
    let done = best[n].take().expect("single-turn segments are always feasible");
    if done.violations > 0 {
        warnings.push(format!(
            "{} segment(s) shorter than min_segment_turns={}",
            done.violations, cfg.min_segment_turns
        ));
    }
    let objective = segmentation_objective(turn_vectors, &done.boundaries, cfg.split_penalty)?;
    Ok((done.boundaries, objective, warnings))
}

pub fn segment_transcript(
    t: &Transcript,
    embedder: &dyn WordEmbedder,
    cfg: &SegmenterConfig,
) -> Result<Segmentation, SegmentationError> {
    segment_transcript_with(t, embedder, &WhitespaceCounter, cfg)
}

/// Segments `t`, counting tokens against the budget with `counter`.
pub fn segment_transcript_with(
    t: &Transcript,
    embedder: &dyn WordEmbedder,
    counter: &dyn TokenCounter,
    cfg: &SegmenterConfig,
) -> Result<Segmentation, SegmentationError> {
    if t.turns.is_empty() {
        return Err(SegmentationError::EmptyTranscript);
    }
    let vectors: Vec<Vec<f64>> = t.turns.iter().map(|turn| turn_vector(turn, embedder)).collect();
    let tokens: Vec<usize> = t.turns.iter().map(|turn| counter.count_tokens(&turn.text)).collect();
    let (boundaries, objective, warnings) = optimal_segmentation(&vectors, &tokens, cfg)?;
    for w in &warnings {
        tracing::warn!(transcript = %t.id, "{w}");
    }
    Ok(Segmentation { segments: spans_to_segments(&t.id, &boundaries, t.len()), objective, warnings })
}

pub fn spans_to_segments(transcript_id: &str, boundaries: &[usize], n: usize) -> Vec<Segment> {
    let mut starts = vec![0];
    starts.extend_from_slice(boundaries);
    starts
        .iter()
        .enumerate()
        .map(|(index, &first)| {
            let last = starts.get(index + 1).map_or(n, |&s| s) - 1;
            Segment { transcript_id: transcript_id.to_string(), turn_span: TurnSpan { first, last }, index }
        })
        .collect()
}
