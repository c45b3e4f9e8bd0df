//! A small post-LayerNorm transformer encoder-decoder with optional speaker
//! and turn embedding tables on the encoder side.
//!
//! Token embeddings are shared between encoder, decoder and the output
//! projection. With `speaker_turn_embeddings = false` the model is the plain
//! baseline; every other parameter is initialized from the same random
//! stream either way, so a baseline and a speaker-aware model built from the
//! same seed differ only in the two extra tables.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel};
use serde::{Deserialize, Serialize};

use super::tokenizer::{Vocab, BOS, EOS, PAD, SEP, UNK};
use super::{
    assign_turn_indices, infer_speaker_turn_indices, DialogueInput, EmbeddingTables, Generation, GenerationParams,
    HighlightModel, SummarizerError, TurnIndices,
};
use crate::nn::{Graph, ParamId, ParamStore, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpeakerTurnInit {
    Zero,
    RandomNormal { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogModelConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub ff_dim: usize,
    pub num_heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub max_positions: usize,
    pub num_speakers: usize,
    pub max_turns: usize,
    pub sep_token: String,
    pub sep_token_id: u32,
    pub speaker_turn_embeddings: bool,
    pub speaker_turn_init: SpeakerTurnInit,
    pub init_std: f64,
}

impl DialogModelConfig {
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden_dim: 32,
            ff_dim: 64,
            num_heads: 2,
            encoder_layers: 2,
            decoder_layers: 2,
            max_positions: 256,
            num_speakers: 2,
            max_turns: 64,
            sep_token: super::tokenizer::DEFAULT_SEP_TOKEN.to_string(),
            sep_token_id: SEP,
            speaker_turn_embeddings: true,
            speaker_turn_init: SpeakerTurnInit::RandomNormal { sigma: 0.02 },
            init_std: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), SummarizerError> {
        let bad = |m: &str| Err(SummarizerError::InvalidConfig(m.to_string()));
        if self.num_speakers < 2 {
            return bad("num_speakers must be >= 2");
        }
        if self.max_turns < 1 {
            return bad("max_turns must be >= 1");
        }
        if self.sep_token_id as usize >= self.vocab_size {
            return bad("sep_token_id outside the vocabulary");
        }
        if self.num_heads == 0 || self.hidden_dim % self.num_heads != 0 {
            return bad("hidden_dim must be divisible by num_heads");
        }
        if self.max_positions < 2 {
            return bad("max_positions must be >= 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Attention {
    q: ParamId,
    k: ParamId,
    v: ParamId,
    o: ParamId,
}

#[derive(Debug, Clone)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone)]
struct FeedForward {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn: Attention,
    ln1: Norm,
    ff: FeedForward,
    ln2: Norm,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    self_attn: Attention,
    ln1: Norm,
    cross_attn: Attention,
    ln2: Norm,
    ff: FeedForward,
    ln3: Norm,
}

#[derive(Debug, Clone)]
struct Params {
    token: ParamId,
    enc_pos: ParamId,
    dec_pos: ParamId,
    speaker: Option<ParamId>,
    turn: Option<ParamId>,
    enc_ln: Norm,
    dec_ln: Norm,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    out_bias: ParamId,
}

/// Token, speaker and turn ids for one encoder sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderInput {
    pub token_ids: Vec<u32>,
    pub speaker_ids: Vec<usize>,
    pub turn_ids: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct DialogModel {
    pub config: DialogModelConfig,
    pub vocab: Vocab,
    pub(crate) store: ParamStore,
    params: Params,
}

impl DialogModel {
    pub fn new(config: DialogModelConfig, vocab: Vocab, seed: u64) -> Result<Self, SummarizerError> {
        config.validate()?;
        if vocab.len() != config.vocab_size {
            return Err(SummarizerError::InvalidConfig(format!(
                "vocab has {} tokens, config says {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // separate stream so the base weights do not depend on whether the
        // extra tables exist
        let mut extra_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed);
        let c = &config;
        let (d, f, std) = (c.hidden_dim, c.ff_dim, c.init_std);
        let mut s = ParamStore::new();

        let norm = |s: &mut ParamStore, name: &str| Norm {
            gamma: s.add_const(&format!("{name}.gamma"), 1, d, 1.0),
            beta: s.add_const(&format!("{name}.beta"), 1, d, 0.0),
        };
        let attention = |s: &mut ParamStore, name: &str, rng: &mut ChaCha8Rng| Attention {
            q: s.add_normal(&format!("{name}.q"), d, d, std, rng),
            k: s.add_normal(&format!("{name}.k"), d, d, std, rng),
            v: s.add_normal(&format!("{name}.v"), d, d, std, rng),
            o: s.add_normal(&format!("{name}.o"), d, d, std, rng),
        };
        let feed_forward = |s: &mut ParamStore, name: &str, rng: &mut ChaCha8Rng| FeedForward {
            w1: s.add_normal(&format!("{name}.w1"), d, f, std, rng),
            b1: s.add_const(&format!("{name}.b1"), 1, f, 0.0),
            w2: s.add_normal(&format!("{name}.w2"), f, d, std, rng),
            b2: s.add_const(&format!("{name}.b2"), 1, d, 0.0),
        };

        let token = s.add_normal("embed.token", c.vocab_size, d, std, &mut rng);
        let enc_pos = s.add_normal("encoder.position", c.max_positions, d, std, &mut rng);
        let dec_pos = s.add_normal("decoder.position", c.max_positions, d, std, &mut rng);
        let enc_ln = norm(&mut s, "encoder.ln_embed");
        let dec_ln = norm(&mut s, "decoder.ln_embed");
        let encoder = (0..c.encoder_layers)
            .map(|l| EncoderLayer {
                attn: attention(&mut s, &format!("encoder.{l}.attn"), &mut rng),
                ln1: norm(&mut s, &format!("encoder.{l}.ln1")),
                ff: feed_forward(&mut s, &format!("encoder.{l}.ff"), &mut rng),
                ln2: norm(&mut s, &format!("encoder.{l}.ln2")),
            })
            .collect();
        let decoder = (0..c.decoder_layers)
            .map(|l| DecoderLayer {
                self_attn: attention(&mut s, &format!("decoder.{l}.self_attn"), &mut rng),
                ln1: norm(&mut s, &format!("decoder.{l}.ln1")),
                cross_attn: attention(&mut s, &format!("decoder.{l}.cross_attn"), &mut rng),
                ln2: norm(&mut s, &format!("decoder.{l}.ln2")),
                ff: feed_forward(&mut s, &format!("decoder.{l}.ff"), &mut rng),
                ln3: norm(&mut s, &format!("decoder.{l}.ln3")),
            })
            .collect();
        let out_bias = s.add_const("lm_head.bias", 1, c.vocab_size, 0.0);
        let (speaker, turn) = if c.speaker_turn_embeddings {
            let sigma = match c.speaker_turn_init {
                SpeakerTurnInit::Zero => 0.0,
                SpeakerTurnInit::RandomNormal { sigma } => sigma,
            };
            (
                Some(s.add_normal("encoder.speaker", c.num_speakers, d, sigma, &mut extra_rng)),
                Some(s.add_normal("encoder.turn", c.max_turns, d, sigma, &mut extra_rng)),
            )
        } else {
            (None, None)
        };
        let params = Params { token, enc_pos, dec_pos, speaker, turn, enc_ln, dec_ln, encoder, decoder, out_bias };
        Ok(Self { config, vocab, store: s, params })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn speaker_table_id(&self) -> Option<ParamId> {
        self.params.speaker
    }

    pub fn turn_table_id(&self) -> Option<ParamId> {
        self.params.turn
    }

    /// The four input tables; absent speaker/turn tables are returned as
    /// zeros so the sum matches the baseline encoder.
    pub fn embedding_tables(&self) -> EmbeddingTables {
        let d = self.config.hidden_dim;
        let table = |id: Option<ParamId>, rows| id.map_or_else(|| Array2::zeros((rows, d)), |id| self.store.get(id).clone());
        EmbeddingTables {
            token: self.store.get(self.params.token).clone(),
            position: self.store.get(self.params.enc_pos).clone(),
            speaker: table(self.params.speaker, self.config.num_speakers),
            turn: table(self.params.turn, self.config.max_turns),
        }
    }

    /// Token ids for a dialogue, turns joined by the separator token, plus
    /// per-token speaker and turn ids. Truncates to the encoder window.
    pub fn encode_dialogue(&self, input: &DialogueInput) -> (EncoderInput, bool) {
        let mut token_ids = Vec::new();
        let mut speakers = Vec::new();
        let mut all_known = true;
        for (i, turn) in input.turns.iter().enumerate() {
            if i > 0 {
                token_ids.push(self.config.sep_token_id);
            }
            token_ids.extend(self.vocab.encode(&turn.text));
            match turn.speaker {
                Some(s) => speakers.push(s),
                None => all_known = false,
            }
        }
        let truncated = token_ids.len() > self.config.max_positions;
        token_ids.truncate(self.config.max_positions);
        let idx = if all_known && !speakers.is_empty() {
            assign_turn_indices(
                &token_ids,
                self.config.sep_token_id,
                &speakers,
                self.config.num_speakers,
                self.config.max_turns,
            )
        } else {
            infer_speaker_turn_indices(
                &token_ids,
                self.config.sep_token_id,
                self.config.num_speakers,
                self.config.max_turns,
            )
        };
        let TurnIndices { speaker_ids, turn_ids, .. } = idx;
        (EncoderInput { token_ids, speaker_ids, turn_ids }, truncated)
    }

    fn check_input(&self, input: &EncoderInput) -> Result<(), SummarizerError> {
        let n = input.token_ids.len();
        if n == 0 {
            return Err(SummarizerError::EmptyInput);
        }
        if input.speaker_ids.len() != n || input.turn_ids.len() != n {
            return Err(SummarizerError::Shape("encoder id sequences differ in length".into()));
        }
        let c = &self.config;
        let out = |table, index, rows| Err(SummarizerError::IndexOutOfRange { table, index, rows });
        if n > c.max_positions {
            return out("position", n - 1, c.max_positions);
        }
        if let Some(&t) = input.token_ids.iter().find(|&&t| t as usize >= c.vocab_size) {
            return out("token", t as usize, c.vocab_size);
        }
        if let Some(&s) = input.speaker_ids.iter().find(|&&s| s >= c.num_speakers) {
            return out("speaker", s, c.num_speakers);
        }
        if let Some(&t) = input.turn_ids.iter().find(|&&t| t >= c.max_turns) {
            return out("turn", t, c.max_turns);
        }
        Ok(())
    }

    fn embed_encoder(&self, g: &mut Graph, input: &EncoderInput) -> Var {
        let n = input.token_ids.len();
        let ids: Vec<usize> = input.token_ids.iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..n).collect();
        let tok = g.gather(self.params.token, &ids);
        let pos = g.gather(self.params.enc_pos, &positions);
        let mut x = g.add(tok, pos);
        if let Some(table) = self.params.speaker {
            let spk = g.gather(table, &input.speaker_ids);
            x = g.add(x, spk);
        }
        if let Some(table) = self.params.turn {
            let turn = g.gather(table, &input.turn_ids);
            x = g.add(x, turn);
        }
        x
    }

    /// Summed input embeddings for one sequence (before the embedding norm).
    pub fn input_embeddings(&self, input: &EncoderInput) -> Result<Array2<f64>, SummarizerError> {
        self.check_input(input)?;
        let mut g = Graph::new(&self.store);
        let x = self.embed_encoder(&mut g, input);
        Ok(g.value(x).clone())
    }

    fn norm(&self, g: &mut Graph, x: Var, n: &Norm) -> Var {
        let gamma = g.param(n.gamma);
        let beta = g.param(n.beta);
        g.layer_norm(x, gamma, beta)
    }

    fn attention(&self, g: &mut Graph, x: Var, memory: Var, a: &Attention, mask: Option<&Array2<f64>>) -> Var {
        let heads = self.config.num_heads;
        let dh = self.config.hidden_dim / heads;
        let (wq, wk, wv, wo) = (g.param(a.q), g.param(a.k), g.param(a.v), g.param(a.o));
        let q = g.matmul(x, wq);
        let k = g.matmul(memory, wk);
        let v = g.matmul(memory, wv);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (g.slice_cols(q, lo, hi), g.slice_cols(k, lo, hi), g.slice_cols(v, lo, hi))
            };
            let scores = g.matmul_t(qh, kh);
            let mut scores = g.scale(scores, scale);
            if let Some(m) = mask {
                scores = g.add_const(scores, m);
            }
            let weights = g.softmax_rows(scores);
            outs.push(g.matmul(weights, vh));
        }
        let ctx = if heads == 1 { outs[0] } else { g.concat_cols(&outs) };
        g.matmul(ctx, wo)
    }

    fn feed_forward(&self, g: &mut Graph, x: Var, f: &FeedForward) -> Var {
        let (w1, b1, w2, b2) = (g.param(f.w1), g.param(f.b1), g.param(f.w2), g.param(f.b2));
        let h = g.matmul(x, w1);
        let h = g.add_row(h, b1);
        let h = g.gelu(h);
        let h = g.matmul(h, w2);
        g.add_row(h, b2)
    }

    fn encode_graph(&self, g: &mut Graph, input: &EncoderInput) -> Var {
        let x = self.embed_encoder(g, input);
        let mut x = self.norm(g, x, &self.params.enc_ln);
        for layer in &self.params.encoder {
            let a = self.attention(g, x, x, &layer.attn, None);
            let r = g.add(x, a);
            x = self.norm(g, r, &layer.ln1);
            let f = self.feed_forward(g, x, &layer.ff);
            let r = g.add(x, f);
            x = self.norm(g, r, &layer.ln2);
        }
        x
    }

    fn decode_graph(&self, g: &mut Graph, memory: Var, decoder_ids: &[usize]) -> Var {
        let m = decoder_ids.len();
        let positions: Vec<usize> = (0..m).map(|p| p.min(self.config.max_positions - 1)).collect();
        let tok = g.gather(self.params.token, decoder_ids);
        let pos = g.gather(self.params.dec_pos, &positions);
        let y = g.add(tok, pos);
        let mut y = self.norm(g, y, &self.params.dec_ln);
        let causal = Array2::from_shape_fn((m, m), |(i, j)| if j > i { -1e9 } else { 0.0 });
        for layer in &self.params.decoder {
            let a = self.attention(g, y, y, &layer.self_attn, Some(&causal));
            let r = g.add(y, a);
            y = self.norm(g, r, &layer.ln1);
            let c = self.attention(g, y, memory, &layer.cross_attn, None);
            let r = g.add(y, c);
            y = self.norm(g, r, &layer.ln2);
            let f = self.feed_forward(g, y, &layer.ff);
            let r = g.add(y, f);
            y = self.norm(g, r, &layer.ln3);
        }
        let table = g.param(self.params.token);
        let logits = g.matmul_t(y, table);
        let bias = g.param(self.params.out_bias);
        g.add_row(logits, bias)
    }

    /// Final encoder hidden states, one row per input token.
    pub fn encode(&self, input: &EncoderInput) -> Result<Array2<f64>, SummarizerError> {
        self.check_input(input)?;
        let mut g = Graph::new(&self.store);
        let h = self.encode_graph(&mut g, input);
        Ok(g.value(h).clone())
    }

    /// Builds the teacher-forced loss graph for one (input, target) pair.
    pub fn loss_graph<'a>(&'a self, input: &EncoderInput, target: &[u32]) -> Result<(Graph<'a>, Var), SummarizerError> {
        self.check_input(input)?;
        let mut dec_in = vec![BOS as usize];
        dec_in.extend(target.iter().map(|&t| t as usize));
        let mut labels: Vec<usize> = target.iter().map(|&t| t as usize).collect();
        labels.push(EOS as usize);
        let mut g = Graph::new(&self.store);
        let memory = self.encode_graph(&mut g, input);
        let logits = self.decode_graph(&mut g, memory, &dec_in);
        let loss = g.cross_entropy(logits, &labels);
        Ok((g, loss))
    }

    pub fn loss(&self, input: &EncoderInput, target: &[u32]) -> Result<f64, SummarizerError> {
        let (g, loss) = self.loss_graph(input, target)?;
        Ok(g.scalar(loss))
    }

    fn next_log_probs(&self, memory: &Array2<f64>, prefix: &[usize]) -> Array1<f64> {
        let mut g = Graph::new(&self.store);
        let memory = g.constant(memory.clone());
        let logits = self.decode_graph(&mut g, memory, prefix);
        let row = g.value(logits).row(prefix.len() - 1).to_owned();
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.mapv(|x| (x - m).exp()).sum().ln();
        let mut lp = row.mapv(|x| x - lse);
        for banned in [PAD, UNK, BOS, SEP] {
            lp[banned as usize] = f64::NEG_INFINITY;
        }
        lp
    }

    /// Beam search (or sampling when `temperature > 0`); returns up to
    /// `num_candidates` distinct token sequences, best first.
    pub fn generate_ids(&self, input: &EncoderInput, params: &GenerationParams) -> Result<Vec<Vec<u32>>, SummarizerError> {
        let memory = self.encode(input)?;
        if params.max_summary_tokens == 0 {
            return Err(SummarizerError::InvalidConfig("max_summary_tokens must be >= 1".into()));
        }
        if params.temperature > 0.0 {
            return Ok(vec![self.sample(&memory, params)]);
        }
        let width = params.num_beams.max(1).max(params.num_candidates);
        let max_len = params.max_summary_tokens.min(self.config.max_positions - 1);
        let score = |len: usize, lp: f64| lp / (len.max(1) as f64).powf(params.length_penalty);
        let mut live: Vec<(Vec<usize>, f64)> = vec![(vec![BOS as usize], 0.0)];
        let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();
        for _ in 0..max_len {
            let mut expansions: Vec<(Vec<usize>, f64)> = Vec::new();
            for (prefix, lp) in &live {
                let next = self.next_log_probs(&memory, prefix);
                let mut order: Vec<usize> = (0..next.len()).filter(|&i| next[i].is_finite()).collect();
                order.sort_by(|&a, &b| next[b].total_cmp(&next[a]).then(a.cmp(&b)));
                for &tok in order.iter().take(width + 1) {
                    let mut seq = prefix.clone();
                    seq.push(tok);
                    expansions.push((seq, lp + next[tok]));
                }
            }
            expansions.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            live.clear();
            for (seq, lp) in expansions {
                if *seq.last().unwrap() == EOS as usize {
                    let body = seq[1..seq.len() - 1].to_vec();
                    finished.push((body.clone(), score(body.len(), lp)));
                } else {
                    live.push((seq, lp));
                }
                if live.len() == width {
                    break;
                }
            }
            if live.is_empty() || finished.len() >= width {
                break;
            }
        }
        for (seq, lp) in live {
            let body = seq[1..].to_vec();
            finished.push((body.clone(), score(body.len(), lp)));
        }
        finished.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut out: Vec<Vec<u32>> = Vec::new();
        for (body, _) in finished {
            let ids: Vec<u32> = body.iter().map(|&t| t as u32).collect();
            if !out.contains(&ids) {
                out.push(ids);
            }
            if out.len() >= params.num_candidates.max(1) {
                break;
            }
        }
        Ok(out)
    }

    fn sample(&self, memory: &Array2<f64>, params: &GenerationParams) -> Vec<u32> {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let gumbel = Gumbel::new(0.0, 1.0).expect("valid gumbel");
        let mut prefix = vec![BOS as usize];
        let max_len = params.max_summary_tokens.min(self.config.max_positions - 1);
        while prefix.len() <= max_len {
            let lp = self.next_log_probs(memory, &prefix);
            let mut best = (f64::NEG_INFINITY, EOS as usize);
            for (tok, &l) in lp.iter().enumerate() {
                if l.is_finite() {
                    let key = l / params.temperature + gumbel.sample(&mut rng);
                    if key > best.0 {
                        best = (key, tok);
                    }
                }
            }
            if best.1 == EOS as usize {
                break;
            }
            prefix.push(best.1);
        }
        prefix[1..].iter().map(|&t| t as u32).collect()
    }
}

impl HighlightModel for DialogModel {
    fn window(&self) -> usize {
        self.config.max_positions
    }

    fn count_tokens(&self, text: &str) -> usize {
        self.vocab.encode(text).len()
    }

    fn generate(&self, input: &DialogueInput, params: &GenerationParams) -> Result<Generation, SummarizerError> {
        let (enc, truncated) = self.encode_dialogue(input);
        let ids = self.generate_ids(&enc, params)?;
        Ok(Generation { candidates: ids.iter().map(|ids| self.vocab.decode(ids)).collect(), truncated })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::summarizer::{compose_input_embeddings, DialogInputBatch, DialogueTurn};

    fn vocab() -> Vocab {
        Vocab::build(["the customer phone broke agent can help refund order late billing"], 1)
    }

    fn tiny(seed: u64, with_tables: bool, init: SpeakerTurnInit) -> DialogModel {
        let v = vocab();
        let cfg = DialogModelConfig {
            hidden_dim: 8,
            ff_dim: 16,
            max_positions: 32,
            max_turns: 8,
            speaker_turn_embeddings: with_tables,
            speaker_turn_init: init,
            ..DialogModelConfig::toy(v.len())
        };
        DialogModel::new(cfg, v, seed).unwrap()
    }

    fn input(m: &DialogModel) -> EncoderInput {
        let d = DialogueInput {
            turns: vec![
                DialogueTurn { speaker: Some(1), text: "the phone broke".into() },
                DialogueTurn { speaker: Some(0), text: "agent can help".into() },
            ],
        };
        m.encode_dialogue(&d).0
    }

    #[test]
    fn encode_dialogue_inserts_separators() {
        let m = tiny(0, true, SpeakerTurnInit::Zero);
        let e = input(&m);
        assert_eq!(e.token_ids.len(), 7);
        assert_eq!(e.token_ids[3], SEP);
        assert_eq!(e.turn_ids, vec![0, 0, 0, 0, 1, 1, 1]);
        assert_eq!(e.speaker_ids, vec![1, 1, 1, 1, 0, 0, 0]);
    }

    #[test]
    fn internal_embedding_sum_matches_compose() {
        let m = tiny(3, true, SpeakerTurnInit::RandomNormal { sigma: 0.5 });
        let e = input(&m);
        let internal = m.input_embeddings(&e).unwrap();
        let batch = DialogInputBatch::from_rows(&[(
            e.token_ids.iter().map(|&t| t as usize).collect(),
            e.speaker_ids.clone(),
            e.turn_ids.clone(),
        )])
        .unwrap();
        let composed = compose_input_embeddings(&batch, &m.embedding_tables()).unwrap();
        let composed = composed.index_axis(ndarray::Axis(0), 0);
        assert!((&internal - &composed).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn base_weights_do_not_depend_on_extra_tables() {
        let a = tiny(11, true, SpeakerTurnInit::RandomNormal { sigma: 0.02 });
        let b = tiny(11, false, SpeakerTurnInit::Zero);
        for (id, name, value) in b.params().iter() {
            let other = a.params().id(name).unwrap();
            assert_eq!(a.params().get(other), value, "{name}");
            let _ = id;
        }
        assert_eq!(a.params().len(), b.params().len() + 2);
    }

    #[test]
    fn out_of_range_ids_are_rejected() {
        let m = tiny(0, true, SpeakerTurnInit::Zero);
        let mut e = input(&m);
        e.turn_ids[6] = 8;
        assert!(matches!(m.encode(&e), Err(SummarizerError::IndexOutOfRange { table: "turn", .. })));
    }

    #[test]
    fn generation_is_deterministic_and_bounded() {
        let m = tiny(5, true, SpeakerTurnInit::RandomNormal { sigma: 0.02 });
        let e = input(&m);
        let p = GenerationParams { max_summary_tokens: 5, num_beams: 3, num_candidates: 2, ..Default::default() };
        let a = m.generate_ids(&e, &p).unwrap();
        let b = m.generate_ids(&e, &p).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty() && a.len() <= 2);
        assert!(a.iter().all(|c| c.len() <= 5));
        let sampled = GenerationParams { temperature: 1.0, seed: 9, ..p };
        assert_eq!(m.generate_ids(&e, &sampled).unwrap(), m.generate_ids(&e, &sampled).unwrap());
    }

    #[test]
    fn long_input_is_truncated() {
        let m = tiny(0, true, SpeakerTurnInit::Zero);
        let text = vec!["the"; 40].join(" ");
        let d = DialogueInput { turns: vec![DialogueTurn { speaker: None, text }] };
        let (e, truncated) = m.encode_dialogue(&d);
        assert!(truncated);
        assert_eq!(e.token_ids.len(), 32);
    }

    #[test]
    fn config_validation() {
        let v = vocab();
        let mut c = DialogModelConfig::toy(v.len());
        c.num_speakers = 1;
        assert!(DialogModel::new(c, v.clone(), 0).is_err());
        let mut c = DialogModelConfig::toy(v.len());
        c.sep_token_id = v.len() as u32;
        assert!(DialogModel::new(c, v.clone(), 0).is_err());
        let c = DialogModelConfig::toy(v.len() + 1);
        assert!(DialogModel::new(c, v, 0).is_err());
    }
}
