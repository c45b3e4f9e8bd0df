use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{DialogModel, EncoderInput};
use super::{DialogueInput, DialogueTurn, SummarizerError};
use crate::nn::{Adam, AdamConfig, Grads};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairSource {
    Human,
    Pseudo,
}

/// One line of a training-pair JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    /// Turns joined with the separator token.
    pub dialogue: String,
    pub summary: String,
    pub source: PairSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
    /// Per-turn speaker ids, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speakers: Option<Vec<usize>>,
}

pub fn read_training_pairs<R: BufRead>(reader: R) -> Result<Vec<TrainingPair>, SummarizerError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair = serde_json::from_str(&line)
            .map_err(|e| SummarizerError::Checkpoint(format!("training pairs line {}: {e}", i + 1)))?;
        out.push(pair);
    }
    Ok(out)
}

pub fn write_training_pairs<W: Write>(mut w: W, pairs: &[TrainingPair]) -> std::io::Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub input: EncoderInput,
    pub target: Vec<u32>,
}

/// Tokenizes a pair with the model's vocabulary and separator convention.
pub fn prepare_example(model: &DialogModel, pair: &TrainingPair) -> TrainingExample {
    let sep = model.config.sep_token.as_str();
    let mut input = DialogueInput::from_rendered(&pair.dialogue, sep);
    if let Some(speakers) = &pair.speakers {
        if speakers.len() == input.turns.len() {
            input.turns = input
                .turns
                .into_iter()
                .zip(speakers)
                .map(|(t, &s)| DialogueTurn { speaker: Some(s), ..t })
                .collect();
        }
    }
    let (input, _) = model.encode_dialogue(&input);
    let mut target = model.vocab.encode(&pair.summary);
    target.truncate(model.config.max_positions - 1);
    TrainingExample { input, target }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub clip_norm: Option<f64>,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self { learning_rate: 3e-3, epochs: 5, batch_size: 8, seed: 0, clip_norm: Some(1.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss over the training set before any update.
    pub initial_loss: f64,
    /// Mean per-example loss seen during each epoch.
    pub loss_history: Vec<f64>,
    pub steps: usize,
}

pub fn mean_loss(model: &DialogModel, examples: &[TrainingExample]) -> Result<f64, SummarizerError> {
    let losses: Result<Vec<f64>, _> = examples.par_iter().map(|e| model.loss(&e.input, &e.target)).collect();
    let losses = losses?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Teacher-forced cross-entropy training with Adam. Minibatch gradients are
/// averaged over examples; order is shuffled per epoch from `hyper.seed`.
pub fn fine_tune(
    model: &mut DialogModel,
    examples: &[TrainingExample],
    hyper: &TrainHyper,
) -> Result<TrainReport, SummarizerError> {
    if examples.is_empty() {
        return Err(SummarizerError::NoTrainingData);
    }
    let initial_loss = mean_loss(model, examples)?;
    let mut report = TrainReport { initial_loss, loss_history: Vec::new(), steps: 0 };
    if hyper.epochs == 0 {
        return Ok(report);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut opt = Adam::new(
        AdamConfig { lr: hyper.learning_rate, clip_norm: hyper.clip_norm, ..Default::default() },
        model.params(),
    );
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(hyper.batch_size.max(1)) {
            let per_example: Result<Vec<(f64, Grads)>, SummarizerError> = batch
                .par_iter()
                .map(|&i| {
                    let (g, loss) = model.loss_graph(&examples[i].input, &examples[i].target)?;
                    Ok((g.scalar(loss), g.backward(loss)))
                })
                .collect();
            let mut grads = Grads::zeros_like(model.params());
            for (loss, g) in per_example? {
                total += loss;
                grads.add_assign(&g);
            }
            grads.scale(1.0 / batch.len() as f64);
            opt.step(model.params_mut(), &grads);
            report.steps += 1;
        }
        let mean = total / examples.len() as f64;
        if !mean.is_finite() {
            return Err(SummarizerError::DivergenceDetected { epoch, loss: mean });
        }
        tracing::debug!(epoch, loss = mean, "epoch done");
        report.loss_history.push(mean);
    }
    Ok(report)
}
