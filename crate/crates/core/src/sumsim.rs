//! Composite summary quality: coverage, relevance, informativeness and
//! factuality folded into one score.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segmentation::{text_vector, WordEmbedder};

#[derive(Debug, Error)]
pub enum SumSimError {
    #[error("component {name} = {value} is outside [0, 1]")]
    ComponentOutOfRange { name: &'static str, value: f64 },
    #[error("weight {name} = {value} is outside [0, 1]")]
    WeightOutOfRange { name: &'static str, value: f64 },
    #[error("scorer {scorer} failed: {message}")]
    Scorer { scorer: String, message: String },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("corpus line {line}: {message}")]
    Corpus { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextNormalization {
    pub lowercase: bool,
    pub strip_punctuation: bool,
}

impl Default for TextNormalization {
    fn default() -> Self {
        Self { lowercase: true, strip_punctuation: true }
    }
}

/// Whitespace tokens after the configured normalization; tokens left empty
/// by punctuation stripping are dropped.
pub fn score_tokens(text: &str, norm: &TextNormalization) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            let kept = t.chars().filter(|c| !norm.strip_punctuation || c.is_alphanumeric());
            if norm.lowercase {
                kept.flat_map(char::to_lowercase).collect::<String>()
            } else {
                kept.collect()
            }
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Longest common subsequence length in O(|a|·|b|) time and O(|b|) space.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L F1 between token sequences; 0 when either is empty.
pub fn rouge_l_f<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

pub fn rouge_l_text(candidate: &str, reference: &str, norm: &TextNormalization) -> f64 {
    rouge_l_f(&score_tokens(candidate, norm), &score_tokens(reference, norm))
}

/// Fraction of keywords found as whole tokens (case-insensitive) in the
/// candidate. Multi-word keywords must appear as a contiguous run. `None`
/// when there are no keywords.
pub fn keyword_informativeness(candidate: &str, keywords: &[String]) -> Option<f64> {
    let norm = TextNormalization::default();
    let keys: Vec<Vec<String>> = keywords.iter().map(|k| score_tokens(k, &norm)).filter(|k| !k.is_empty()).collect();
    if keys.is_empty() {
        return None;
    }
    let toks = score_tokens(candidate, &norm);
    let hits = keys.iter().filter(|k| toks.windows(k.len()).any(|w| w == k.as_slice())).count();
    Some(hits as f64 / keys.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SumSimWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for SumSimWeights {
    fn default() -> Self {
        Self { alpha: 0.3, beta: 0.3 }
    }
}

impl SumSimWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, SumSimError> {
        let w = Self { alpha, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), SumSimError> {
        for (name, value) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SumSimError::WeightOutOfRange { name, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportFlags {
    /// No keywords: informativeness weight treated as 0.
    pub informativeness_undefined: bool,
    /// No factuality scorer: factuality weight treated as 0.
    pub factuality_skipped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance_scorer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factuality_scorer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumSimReport {
    pub s_r: f64,
    pub s_b: f64,
    pub s_i: Option<f64>,
    pub s_f: Option<f64>,
    pub s_0: f64,
    pub sumsim: f64,
    /// Weights actually applied after degradation.
    pub alpha: f64,
    pub beta: f64,
    pub flags: ReportFlags,
}

fn check(name: &'static str, value: f64) -> Result<f64, SumSimError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(SumSimError::ComponentOutOfRange { name, value })
    }
}

/// `s_0 = α·s_i + (1−α)/2·(s_r + s_b)` and `sumsim = β·s_f + (1−β)·s_0`.
/// A missing `s_i` drops α to 0; a missing `s_f` drops β to 0.
pub fn compose(s_r: f64, s_b: f64, s_i: Option<f64>, s_f: Option<f64>, w: &SumSimWeights) -> Result<SumSimReport, SumSimError> {
    w.validate()?;
    let s_r = check("s_r", s_r)?;
    let s_b = check("s_b", s_b)?;
    let s_i = s_i.map(|v| check("s_i", v)).transpose()?;
    let s_f = s_f.map(|v| check("s_f", v)).transpose()?;
    let alpha = if s_i.is_some() { w.alpha } else { 0.0 };
    let beta = if s_f.is_some() { w.beta } else { 0.0 };
    let s_0 = alpha * s_i.unwrap_or(0.0) + (1.0 - alpha) / 2.0 * (s_r + s_b);
    let sumsim = beta * s_f.unwrap_or(0.0) + (1.0 - beta) * s_0;
    Ok(SumSimReport {
        s_r,
        s_b,
        s_i,
        s_f,
        s_0,
        sumsim,
        alpha,
        beta,
        flags: ReportFlags { informativeness_undefined: s_i.is_none(), factuality_skipped: s_f.is_none(), ..Default::default() },
    })
}

/// Semantic similarity between a candidate and its reference, in [0, 1].
pub trait RelevanceScorer: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, candidate: &str, reference: &str) -> Result<f64, String>;
}

/// Factual consistency of a candidate with its source text, in [0, 1].
pub trait FactualityScorer: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, candidate: &str, source: &str) -> Result<f64, String>;
}

/// Cosine similarity of token-count vectors.
#[derive(Debug, Clone, Default)]
pub struct LexicalCosine {
    pub norm: TextNormalization,
}

impl RelevanceScorer for LexicalCosine {
    fn name(&self) -> &str {
        "lexical-cosine"
    }

    fn score(&self, candidate: &str, reference: &str) -> Result<f64, String> {
        let count = |t: &str| {
            let mut m: HashMap<String, f64> = HashMap::new();
            for tok in score_tokens(t, &self.norm) {
                *m.entry(tok).or_default() += 1.0;
            }
            m
        };
        let (a, b) = (count(candidate), count(reference));
        let dot: f64 = a.iter().filter_map(|(k, x)| b.get(k).map(|y| x * y)).sum();
        let na: f64 = a.values().map(|x| x * x).sum();
        let nb: f64 = b.values().map(|x| x * x).sum();
        if na == 0.0 || nb == 0.0 {
            return Ok(0.0);
        }
        Ok((dot / (na * nb).sqrt()).clamp(0.0, 1.0))
    }
}

/// Cosine of mean word vectors, negative similarity clipped to 0.
pub struct EmbeddingRelevance {
    pub embedder: Arc<dyn WordEmbedder>,
}

impl RelevanceScorer for EmbeddingRelevance {
    fn name(&self) -> &str {
        "embedding-cosine"
    }

    fn score(&self, candidate: &str, reference: &str) -> Result<f64, String> {
        let a = text_vector(candidate, self.embedder.as_ref());
        let b = text_vector(reference, self.embedder.as_ref());
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        Ok(dot.clamp(0.0, 1.0))
    }
}

/// Share of candidate tokens that also occur in the source.
#[derive(Debug, Clone, Default)]
pub struct ContainmentFactuality {
    pub norm: TextNormalization,
}

impl FactualityScorer for ContainmentFactuality {
    fn name(&self) -> &str {
        "containment"
    }

    fn score(&self, candidate: &str, source: &str) -> Result<f64, String> {
        let cand = score_tokens(candidate, &self.norm);
        let src: std::collections::HashSet<String> = score_tokens(source, &self.norm).into_iter().collect();
        if cand.is_empty() {
            return Ok(if src.is_empty() { 1.0 } else { 0.0 });
        }
        Ok(cand.iter().filter(|t| src.contains(*t)).count() as f64 / cand.len() as f64)
    }
}

pub struct ScorerBundle {
    pub normalization: TextNormalization,
    pub relevance: Box<dyn RelevanceScorer>,
    pub factuality: Option<Box<dyn FactualityScorer>>,
    pub keywords: Vec<String>,
}

impl ScorerBundle {
    /// Lexical relevance and containment factuality.
    pub fn lexical(keywords: Vec<String>) -> Self {
        Self {
            normalization: TextNormalization::default(),
            relevance: Box::new(LexicalCosine::default()),
            factuality: Some(Box::new(ContainmentFactuality::default())),
            keywords,
        }
    }
}

fn scorer_value(scorer: &str, r: Result<f64, String>) -> Result<f64, SumSimError> {
    let v = r.map_err(|message| SumSimError::Scorer { scorer: scorer.to_string(), message })?;
    if !(0.0..=1.0).contains(&v) {
        return Err(SumSimError::Scorer { scorer: scorer.to_string(), message: format!("returned {v} outside [0, 1]") });
    }
    Ok(v)
}

/// Coverage and relevance against the reference; factuality against the source.
pub fn score_pair(
    candidate: &str,
    reference: &str,
    source: &str,
    bundle: &ScorerBundle,
    w: &SumSimWeights,
) -> Result<SumSimReport, SumSimError> {
    let s_r = rouge_l_text(candidate, reference, &bundle.normalization);
    let s_b = scorer_value(bundle.relevance.name(), bundle.relevance.score(candidate, reference))?;
    let s_i = keyword_informativeness(candidate, &bundle.keywords);
    let s_f = match &bundle.factuality {
        Some(f) => Some(scorer_value(f.name(), f.score(candidate, source))?),
        None => None,
    };
    let mut report = compose(s_r, s_b, s_i, s_f, w)?;
    report.flags.relevance_scorer = Some(bundle.relevance.name().to_string());
    report.flags.factuality_scorer = bundle.factuality.as_ref().map(|f| f.name().to_string());
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub candidate: String,
    pub reference: String,
    #[serde(default)]
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<SumSimReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionMeans {
    pub s_r: f64,
    pub s_b: f64,
    pub s_i: Option<f64>,
    pub s_f: Option<f64>,
    pub s_0: f64,
    pub sumsim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub pairs: Vec<PairReport>,
    /// `None` when every pair failed.
    pub means: Option<DimensionMeans>,
    pub scored: usize,
    pub failed: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Scores every entry in parallel. Failed pairs are reported and left out
/// of the means.
pub fn evaluate_corpus(entries: &[CorpusEntry], bundle: &ScorerBundle, w: &SumSimWeights) -> Result<CorpusReport, SumSimError> {
    if entries.is_empty() {
        return Err(SumSimError::EmptyCorpus);
    }
    w.validate()?;
    let pairs: Vec<PairReport> = entries
        .par_iter()
        .enumerate()
        .map(|(index, e)| match score_pair(&e.candidate, &e.reference, &e.source, bundle, w) {
            Ok(r) => PairReport { index, report: Some(r), error: None },
            Err(err) => PairReport { index, report: None, error: Some(err.to_string()) },
        })
        .collect();
    let ok: Vec<&SumSimReport> = pairs.iter().filter_map(|p| p.report.as_ref()).collect();
    let failed = pairs.len() - ok.len();
    if failed > 0 {
        tracing::warn!(failed, "pairs failed to score");
    }
    let means = (!ok.is_empty()).then(|| DimensionMeans {
        s_r: mean(ok.iter().map(|r| r.s_r)).unwrap(),
        s_b: mean(ok.iter().map(|r| r.s_b)).unwrap(),
        s_i: mean(ok.iter().filter_map(|r| r.s_i)),
        s_f: mean(ok.iter().filter_map(|r| r.s_f)),
        s_0: mean(ok.iter().map(|r| r.s_0)).unwrap(),
        sumsim: mean(ok.iter().map(|r| r.sumsim)).unwrap(),
    });
    Ok(CorpusReport { scored: ok.len(), failed, pairs, means })
}

pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<CorpusEntry>, SumSimError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| SumSimError::Corpus { line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}

/// One keyword per line; blank lines are skipped.
pub fn read_keywords(path: &Path) -> Result<Vec<String>, SumSimError> {
    Ok(std::fs::read_to_string(path)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

/// `dimension,mean` rows for a bar chart; undefined dimensions are left blank.
pub fn write_breakdown_csv<W: Write>(w: W, means: &DimensionMeans) -> Result<(), SumSimError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["dimension", "mean"])?;
    let rows = [
        ("coverage", Some(means.s_r)),
        ("relevance", Some(means.s_b)),
        ("informativeness", means.s_i),
        ("factuality", means.s_f),
        ("s_0", Some(means.s_0)),
        ("sumsim", Some(means.sumsim)),
    ];
    for (name, v) in rows {
        out.write_record([name.to_string(), v.map(|x| format!("{x:.6}")).unwrap_or_default()])?;
    }
    out.flush()?;
    Ok(())
}
