//! Perplexity-based acceptability routing for generated highlights.
//!
//! A language model scores each highlight; low perplexity is accepted,
//! moderate perplexity is shown with a revision indicator, and high
//! perplexity is rejected (kept, but hidden by default).

use std::io::Read;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Adam, AdamConfig, Graph, ParamStore};
use crate::summarizer::tokenizer::{Vocab, BOS};
use crate::transcript::HighlightStatus;

#[derive(Debug, Error)]
pub enum AcceptabilityError {
    #[error("text has {0} token(s); at least 2 are needed including the start marker")]
    TooShort(usize),
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error("no training summaries")]
    EmptyCorpus,
    #[error("no labeled sentences")]
    EmptyBenchmark,
    #[error("language-model training diverged at epoch {epoch}")]
    DivergenceDetected { epoch: usize },
    #[error("labeled file: {0}")]
    LabeledFile(String),
    #[error("language model file: {0}")]
    ModelFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An autoregressive language model over its own token vocabulary.
pub trait LanguageModelScorer: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Token ids for `text`, beginning with the start-of-text marker, which
    /// is conditioned on but never predicted.
    fn tokenize(&self, text: &str) -> Vec<u32>;

    /// Distribution of the next token given `prefix` (non-empty).
    fn next_token_distribution(&self, prefix: &[u32]) -> Vec<f64>;

    /// `p(w_k | w_0..w_{k-1})` for every k >= 1.
    fn predicted_token_probs(&self, tokens: &[u32]) -> Vec<f64> {
        (1..tokens.len())
            .map(|k| self.next_token_distribution(&tokens[..k])[tokens[k] as usize])
            .collect()
    }
}

/// Perplexity of `text`: the n-th root of the product of inverse
/// probabilities of the n predicted tokens. A zero probability gives +inf.
pub fn perplexity(text: &str, lm: &dyn LanguageModelScorer) -> Result<f64, AcceptabilityError> {
    perplexity_of_tokens(&lm.tokenize(text), lm)
}

pub fn perplexity_of_tokens(tokens: &[u32], lm: &dyn LanguageModelScorer) -> Result<f64, AcceptabilityError> {
    if tokens.len() < 2 {
        return Err(AcceptabilityError::TooShort(tokens.len()));
    }
    Ok(perplexity_from_probs(&lm.predicted_token_probs(tokens)))
}

/// `∏ (1/p_k)^(1/n)`, accumulated factor by factor so long texts do not
/// overflow.
pub fn perplexity_from_probs(probs: &[f64]) -> f64 {
    let n = probs.len() as f64;
    let mut pp = 1.0;
    for &p in probs {
        if p <= 0.0 {
            return f64::INFINITY;
        }
        pp *= (1.0 / p).powf(1.0 / n);
    }
    // rounding can land a hair under 1 when every p is 1
    pp.max(1.0)
}

/// Mean negative log-probability of the predicted tokens (= ln PP).
pub fn mean_negative_log_prob(tokens: &[u32], lm: &dyn LanguageModelScorer) -> Result<f64, AcceptabilityError> {
    if tokens.len() < 2 {
        return Err(AcceptabilityError::TooShort(tokens.len()));
    }
    let probs = lm.predicted_token_probs(tokens);
    Ok(-probs.iter().map(|p| p.ln()).sum::<f64>() / probs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptabilityThresholds {
    pub tau_accept: f64,
    pub tau_reject: f64,
}

impl Default for AcceptabilityThresholds {
    fn default() -> Self {
        Self { tau_accept: 50.0, tau_reject: 200.0 }
    }
}

impl AcceptabilityThresholds {
    pub fn new(tau_accept: f64, tau_reject: f64) -> Result<Self, AcceptabilityError> {
        let t = Self { tau_accept, tau_reject };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), AcceptabilityError> {
        if !(self.tau_accept > 1.0 && self.tau_reject > 1.0) {
            return Err(AcceptabilityError::InvalidThresholds("both thresholds must exceed 1".into()));
        }
        if !(self.tau_accept < self.tau_reject) {
            return Err(AcceptabilityError::InvalidThresholds(format!(
                "tau_accept {} must be below tau_reject {}",
                self.tau_accept, self.tau_reject
            )));
        }
        Ok(())
    }

    /// 90th / 99th percentile of perplexities measured on known-good text.
    pub fn calibrate(known_good: &[f64]) -> Result<Self, AcceptabilityError> {
        let finite: Vec<f64> = known_good.iter().copied().filter(|p| p.is_finite()).collect();
        let accept = crate::util::percentile(&finite, 90.0)
            .ok_or_else(|| AcceptabilityError::InvalidThresholds("no finite perplexities to calibrate on".into()))?;
        let reject = crate::util::percentile(&finite, 99.0).unwrap();
        let accept = accept.max(1.0 + 1e-6);
        // keep the review band non-empty when the sample is degenerate
        let reject = if reject > accept { reject } else { accept * (1.0 + 1e-6) };
        Self::new(accept, reject)
    }
}

/// ACCEPT iff `pp <= tau_accept`, REVIEW iff `tau_accept < pp <= tau_reject`,
/// REJECT otherwise (including +inf and NaN).
pub fn classify_highlight(pp: f64, th: &AcceptabilityThresholds) -> HighlightStatus {
    if pp <= th.tau_accept {
        HighlightStatus::Accept
    } else if pp <= th.tau_reject {
        HighlightStatus::Review
    } else {
        HighlightStatus::Reject
    }
}

/// Accuracy of the binary decision (ACCEPT or REVIEW means acceptable)
/// against gold labels. Unscorable sentences count as rejected.
pub fn evaluate_acceptability(
    lm: &dyn LanguageModelScorer,
    labeled: &[(String, bool)],
    th: &AcceptabilityThresholds,
) -> Result<f64, AcceptabilityError> {
    if labeled.is_empty() {
        return Err(AcceptabilityError::EmptyBenchmark);
    }
    let correct = labeled
        .iter()
        .filter(|(sentence, gold)| {
            let pp = perplexity(sentence, lm).unwrap_or(f64::INFINITY);
            let predicted = classify_highlight(pp, th) != HighlightStatus::Reject;
            predicted == *gold
        })
        .count();
    Ok(correct as f64 / labeled.len() as f64)
}

/// Reads `sentence,label` rows (label 0 or 1). A first row whose label is
/// not 0/1 is taken as a header.
pub fn read_labeled_csv<R: Read>(reader: R) -> Result<Vec<(String, bool)>, AcceptabilityError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(false).from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| AcceptabilityError::LabeledFile(e.to_string()))?;
        if rec.len() != 2 {
            return Err(AcceptabilityError::LabeledFile(format!("row {} has {} fields", i + 1, rec.len())));
        }
        let label = match rec[1].trim() {
            "1" => true,
            "0" => false,
            _ if i == 0 => continue,
            other => return Err(AcceptabilityError::LabeledFile(format!("row {}: bad label {other:?}", i + 1))),
        };
        out.push((rec[0].to_string(), label));
    }
    Ok(out)
}

pub fn load_labeled_csv(path: &Path) -> Result<Vec<(String, bool)>, AcceptabilityError> {
    read_labeled_csv(std::fs::File::open(path)?)
}

/// Neural bigram language model: `p(next | prev) = softmax(W[prev])`.
///
/// A zero table is the uniform model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigramLm {
    pub vocab: Vocab,
    rows: usize,
    cols: usize,
    logits: Vec<f64>,
}

impl BigramLm {
    pub fn uniform(vocab: Vocab) -> Self {
        let v = vocab.len();
        Self { vocab, rows: v, cols: v, logits: vec![0.0; v * v] }
    }

    /// Add-k smoothed counts, stored as log-probabilities.
    pub fn from_counts<'a>(vocab: Vocab, corpus: impl IntoIterator<Item = &'a str>, add_k: f64) -> Self {
        let mut lm = Self::uniform(vocab);
        let v = lm.cols;
        let mut counts = vec![0.0; v * v];
        for text in corpus {
            let toks = lm.tokenize(text);
            for w in toks.windows(2) {
                counts[w[0] as usize * v + w[1] as usize] += 1.0;
            }
        }
        for r in 0..v {
            let row = &counts[r * v..(r + 1) * v];
            let total: f64 = row.iter().sum::<f64>() + add_k * v as f64;
            for c in 0..v {
                lm.logits[r * v + c] = ((row[c] + add_k) / total).ln();
            }
        }
        lm
    }

    fn table(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.rows, self.cols), self.logits.clone()).expect("square table")
    }

    pub fn save(&self, path: &Path) -> Result<(), AcceptabilityError> {
        let json = serde_json::to_vec(self).map_err(|e| AcceptabilityError::ModelFile(e.to_string()))?;
        crate::util::atomic_write(path, &json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AcceptabilityError> {
        let raw = std::fs::read(path).map_err(|e| AcceptabilityError::ModelFile(format!("{}: {e}", path.display())))?;
        let lm: Self = serde_json::from_slice(&raw).map_err(|e| AcceptabilityError::ModelFile(e.to_string()))?;
        if lm.rows != lm.vocab.len() || lm.cols != lm.vocab.len() || lm.logits.len() != lm.rows * lm.cols {
            return Err(AcceptabilityError::ModelFile("table shape does not match vocabulary".into()));
        }
        Ok(lm)
    }

    fn row_distribution(&self, prev: u32) -> Vec<f64> {
        let row = &self.logits[prev as usize * self.cols..(prev as usize + 1) * self.cols];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }
}

impl LanguageModelScorer for BigramLm {
    fn vocab_size(&self) -> usize {
        self.cols
    }

    fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut out = vec![BOS];
        out.extend(self.vocab.encode(text));
        out
    }

    fn next_token_distribution(&self, prefix: &[u32]) -> Vec<f64> {
        self.row_distribution(*prefix.last().expect("non-empty prefix"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LmHyper {
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for LmHyper {
    fn default() -> Self {
        Self { learning_rate: 0.05, epochs: 5 }
    }
}

/// Full-batch self-supervised next-token training on `summaries`; returns
/// the mean training cross-entropy per epoch.
pub fn fine_tune_lm(lm: &mut BigramLm, summaries: &[String], hyper: &LmHyper) -> Result<Vec<f64>, AcceptabilityError> {
    if summaries.is_empty() {
        return Err(AcceptabilityError::EmptyCorpus);
    }
    let mut prev = Vec::new();
    let mut next = Vec::new();
    for s in summaries {
        let toks = lm.tokenize(s);
        for w in toks.windows(2) {
            prev.push(w[0] as usize);
            next.push(w[1] as usize);
        }
    }
    if prev.is_empty() {
        return Err(AcceptabilityError::EmptyCorpus);
    }
    let mut store = ParamStore::new();
    let table = store.add("bigram", lm.table());
    let mut opt = Adam::new(AdamConfig { lr: hyper.learning_rate, clip_norm: None, ..Default::default() }, &store);
    let mut history = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        let (loss, grads) = {
            let mut g = Graph::new(&store);
            let logits = g.gather(table, &prev);
            let loss = g.cross_entropy(logits, &next);
            (g.scalar(loss), g.backward(loss))
        };
        if !loss.is_finite() {
            return Err(AcceptabilityError::DivergenceDetected { epoch });
        }
        history.push(loss);
        opt.step(&mut store, &grads);
    }
    if hyper.epochs > 0 {
        lm.logits = store.get(table).iter().copied().collect();
    }
    Ok(history)
}
