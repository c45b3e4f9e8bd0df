use super::{DialogueInput, Generation, GenerationParams, HighlightModel, SummarizerError};

/// Deterministic stand-in summarizer: returns the first sentence of the
/// segment, capped at `max_summary_tokens` words.
#[derive(Debug, Clone)]
pub struct EchoFirstSentence {
    /// Input window in whitespace tokens.
    pub window: usize,
}

impl Default for EchoFirstSentence {
    fn default() -> Self {
        Self { window: 512 }
    }
}

impl HighlightModel for EchoFirstSentence {
    fn window(&self) -> usize {
        self.window
    }

    fn count_tokens(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }

    fn generate(&self, input: &DialogueInput, params: &GenerationParams) -> Result<Generation, SummarizerError> {
        let words: Vec<&str> = input.turns.iter().flat_map(|t| t.text.split_whitespace()).collect();
        let truncated = words.len() > self.window;
        let words = &words[..words.len().min(self.window)];
        let end = words
            .iter()
            .position(|w| w.ends_with(['.', '!', '?']))
            .map_or(words.len(), |i| i + 1);
        let sentence = words[..end.min(params.max_summary_tokens)].join(" ");
        Ok(Generation { candidates: vec![sentence], truncated })
    }
}
