//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs without the libtest harness so the lines always print.

use std::time::{Duration, Instant};

use chrono::DateTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use callsum::acceptability::{
    classify_highlight, evaluate_acceptability, mean_negative_log_prob, perplexity, perplexity_from_probs,
    perplexity_of_tokens, AcceptabilityThresholds, BigramLm, LanguageModelScorer,
};
use callsum::pseudo_label::{default_templates, label_segments, mix_datasets, FixedClock, LabelPolicy, StubClient};
use callsum::segmentation::{segment_transcript, text_vector, HashEmbedder, SegmenterConfig, WordEmbedder};
use callsum::service::{EditAction, EditEvent, SessionStore, SummarySession};
use callsum::summarizer::tokenizer::DEFAULT_SEP_TOKEN;
use callsum::summarizer::{
    fine_tune, mean_loss, prepare_example, write_training_pairs, DialogModel, DialogModelConfig, EncoderInput,
    PairSource, SpeakerTurnInit, TrainHyper, TrainingPair, Vocab,
};
use callsum::sumsim::{compose, rouge_l_f, rouge_l_text, SumSimWeights, TextNormalization};
use callsum::transcript::{check_partition, HighlightStatus, SpeakerRole, Transcript};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lcs_oracle<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] { t[i - 1][j - 1] + 1 } else { t[i - 1][j].max(t[i][j - 1]) };
        }
    }
    t[a.len()][b.len()]
}

fn rouge_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let vocab = rng.random_range(1..=10u32);
        let a: Vec<u32> = (0..rng.random_range(0..=30)).map(|_| rng.random_range(0..vocab)).collect();
        let b: Vec<u32> = (0..rng.random_range(0..=30)).map(|_| rng.random_range(0..vocab)).collect();
        let l = lcs_oracle(&a, &b) as f64;
        let expected = if l == 0.0 {
            0.0
        } else {
            let (p, r) = (l / a.len() as f64, l / b.len() as f64);
            2.0 * p * r / (p + r)
        };
        worst = worst.max((rouge_l_f(&a, &b) - expected).abs());
    }
    ensure(worst < 1e-12, || format!("max diff {worst:e}"))?;
    let hand = rouge_l_text("the cat sat", "the cat ran home", &TextNormalization::default());
    ensure((hand - 4.0 / 7.0).abs() < 1e-12, || format!("hand case gave {hand}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("max diff {worst:e} over 1000 pairs, hand case {hand:.6}, {elapsed:?}"))
}

/// Next-token table drawn at random; independent of the crate's models.
struct RandomTableLm {
    probs: Vec<Vec<f64>>,
}

impl RandomTableLm {
    fn new(v: usize, rng: &mut ChaCha8Rng) -> Self {
        let probs = (0..v)
            .map(|_| {
                let w: Vec<f64> = (0..v).map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = w.iter().sum();
                w.into_iter().map(|x| x / s).collect()
            })
            .collect();
        Self { probs }
    }
}

impl LanguageModelScorer for RandomTableLm {
    fn vocab_size(&self) -> usize {
        self.probs.len()
    }
    fn tokenize(&self, text: &str) -> Vec<u32> {
        std::iter::once(0).chain(text.bytes().map(|b| 1 + b as u32 % (self.probs.len() as u32 - 1))).collect()
    }
    fn next_token_distribution(&self, prefix: &[u32]) -> Vec<f64> {
        self.probs[*prefix.last().unwrap() as usize].clone()
    }
}

fn perplexity_closed_forms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for extra in [0usize, 1, 7, 40] {
        let words: Vec<String> = (0..extra).map(|i| format!("w{i}")).collect();
        let vocab = Vocab::build(words.iter().map(String::as_str), 1);
        let v = vocab.len() as f64;
        let lm = BigramLm::uniform(vocab);
        for text in ["w0", "w1 w2 w3 unseen", "a b c d e f g"] {
            let pp = perplexity(text, &lm).map_err(|e| e.to_string())?;
            ensure((pp - v).abs() < 1e-9, || format!("uniform PP {pp} != {v}"))?;
        }
    }
    let pp = perplexity_from_probs(&[0.5, 0.25, 0.125]);
    ensure((pp - 4.0).abs() < 1e-9, || format!("0.5/0.25/0.125 case gave {pp}"))?;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let lm = RandomTableLm::new(rng.random_range(3..20), &mut rng);
        let len = rng.random_range(1..30);
        let tokens: Vec<u32> =
            std::iter::once(0).chain((0..len).map(|_| rng.random_range(0..lm.vocab_size() as u32))).collect();
        let pp = perplexity_of_tokens(&tokens, &lm).map_err(|e| e.to_string())?;
        let nll = mean_negative_log_prob(&tokens, &lm).map_err(|e| e.to_string())?;
        worst = worst.max((pp.ln() - nll).abs());
    }
    ensure(worst < 1e-9, || format!("log-PP vs mean NLL max diff {worst:e}"))?;
    Ok(format!("uniform PP = |V|, closed form {pp}, log-PP path max diff {worst:e}"))
}

fn composition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tuples: Vec<[f64; 4]> = (0..200).map(|_| std::array::from_fn(|_| rng.random_range(0.0..=1.0))).collect();
    let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut worst = 0.0f64;
    for &alpha in &grid {
        for &beta in &grid {
            let w = SumSimWeights::new(alpha, beta).map_err(|e| e.to_string())?;
            for [sr, sb, si, sf] in &tuples {
                let s0 = alpha * si + (1.0 - alpha) / 2.0 * (sr + sb);
                let direct = beta * sf + (1.0 - beta) * s0;
                let r = compose(*sr, *sb, Some(*si), Some(*sf), &w).map_err(|e| e.to_string())?;
                worst = worst.max((r.sumsim - direct).abs()).max((r.s_0 - s0).abs());
            }
        }
    }
    ensure(worst < 1e-12, || format!("compose vs direct max diff {worst:e}"))?;
    for i in 0..10_000 {
        let s: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..=1.0));
        let w = SumSimWeights::new(rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0)).map_err(|e| e.to_string())?;
        let base = compose(s[0], s[1], Some(s[2]), Some(s[3]), &w).map_err(|e| e.to_string())?.sumsim;
        ensure((0.0..=1.0).contains(&base), || format!("probe {i}: {base} outside [0,1]"))?;
        let k = rng.random_range(0..4);
        let mut t = s;
        t[k] = rng.random_range(t[k]..=1.0);
        let up = compose(t[0], t[1], Some(t[2]), Some(t[3]), &w).map_err(|e| e.to_string())?.sumsim;
        ensure(up >= base - 1e-12, || format!("probe {i}: raising component {k} lowered score"))?;
    }
    Ok(format!("25 weight pairs x 200 tuples max diff {worst:e}; 10000 probes bounded and monotone"))
}

fn toy_config(vocab_size: usize, embeddings: bool, init: SpeakerTurnInit) -> DialogModelConfig {
    DialogModelConfig {
        hidden_dim: 16,
        ff_dim: 32,
        num_heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        max_positions: 64,
        max_turns: 16,
        speaker_turn_embeddings: embeddings,
        speaker_turn_init: init,
        ..DialogModelConfig::toy(vocab_size)
    }
}

fn toy_vocab() -> Vocab {
    let words: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
    Vocab::build(words.iter().map(String::as_str), 1)
}

fn random_input(rng: &mut ChaCha8Rng, cfg: &DialogModelConfig) -> EncoderInput {
    let len = rng.random_range(1..40);
    let mut turn = 0;
    let mut token_ids = Vec::new();
    let mut speaker_ids = Vec::new();
    let mut turn_ids = Vec::new();
    for _ in 0..len {
        if rng.random_bool(0.2) && turn + 1 < cfg.max_turns {
            turn += 1;
        }
        token_ids.push(rng.random_range(0..cfg.vocab_size as u32));
        speaker_ids.push(rng.random_range(0..cfg.num_speakers));
        turn_ids.push(turn);
    }
    EncoderInput { token_ids, speaker_ids, turn_ids }
}

fn zero_init_equivalence() -> Outcome {
    let vocab = toy_vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for batch in 0..50u64 {
        let seed = 100 + batch;
        let with = DialogModel::new(toy_config(vocab.len(), true, SpeakerTurnInit::Zero), vocab.clone(), seed)
            .map_err(|e| e.to_string())?;
        let base = DialogModel::new(toy_config(vocab.len(), false, SpeakerTurnInit::Zero), vocab.clone(), seed)
            .map_err(|e| e.to_string())?;
        for _ in 0..4 {
            let input = random_input(&mut rng, &with.config);
            let a = with.encode(&input).map_err(|e| e.to_string())?;
            let b = base.encode(&input).map_err(|e| e.to_string())?;
            worst = worst.max((&a - &b).iter().fold(0.0f64, |m, x| m.max(x.abs())));
        }
    }
    ensure(worst < 1e-6, || format!("max hidden-state diff {worst:e}"))?;
    Ok(format!("50 batches of 4, max hidden-state diff {worst:e}"))
}

fn gradient_check() -> Outcome {
    let vocab = toy_vocab();
    let cfg = DialogModelConfig { init_std: 0.3, ..toy_config(vocab.len(), true, SpeakerTurnInit::RandomNormal { sigma: 0.5 }) };
    let mut model = DialogModel::new(cfg, vocab, 9).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let input = random_input(&mut rng, &model.config);
    let target: Vec<u32> = (0..6).map(|_| rng.random_range(5..model.config.vocab_size as u32)).collect();
    let mut report = Vec::new();
    for (name, id) in [("speaker", model.speaker_table_id()), ("turn", model.turn_table_id())] {
        let id = id.ok_or("missing table")?;
        let analytic = {
            let (g, loss) = model.loss_graph(&input, &target).map_err(|e| e.to_string())?;
            g.backward(loss).get(id).cloned().ok_or("no gradient for table")?
        };
        let h = 1e-5;
        let mut numeric = analytic.clone();
        let (rows, cols) = analytic.dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = model.params().get(id)[[r, c]];
                model.params_mut().get_mut(id)[[r, c]] = orig + h;
                let up = model.loss(&input, &target).map_err(|e| e.to_string())?;
                model.params_mut().get_mut(id)[[r, c]] = orig - h;
                let down = model.loss(&input, &target).map_err(|e| e.to_string())?;
                model.params_mut().get_mut(id)[[r, c]] = orig;
                numeric[[r, c]] = (up - down) / (2.0 * h);
            }
        }
        let diff = (&analytic - &numeric).mapv(|x| x * x).sum().sqrt();
        let scale = analytic.mapv(|x| x * x).sum().sqrt().max(numeric.mapv(|x| x * x).sum().sqrt());
        let rel = diff / scale.max(1e-12);
        ensure(scale > 1e-8, || format!("{name} gradient is zero"))?;
        ensure(rel < 1e-4, || format!("{name} table relative error {rel:e}"))?;
        report.push(format!("{name} rel err {rel:.2e}"));
    }
    Ok(format!("d=16; {}", report.join(", ")))
}

fn directional_replication() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let train = callsum::synthetic::customer_copy_task(1000 + seed, 200, DEFAULT_SEP_TOKEN);
        let test = callsum::synthetic::customer_copy_task(2000 + seed, 50, DEFAULT_SEP_TOKEN);
        let vocab = Vocab::build(train.iter().chain(&test).flat_map(|p| [p.dialogue.as_str(), p.summary.as_str()]), 1);
        let hyper = TrainHyper { learning_rate: 3e-3, epochs: 30, batch_size: 8, seed, clip_norm: Some(1.0) };
        let mut losses = [0.0; 2];
        for (k, embeddings) in [true, false].into_iter().enumerate() {
            let cfg = toy_config(vocab.len(), embeddings, SpeakerTurnInit::RandomNormal { sigma: 0.02 });
            let mut model = DialogModel::new(cfg, vocab.clone(), seed).map_err(|e| e.to_string())?;
            let tr: Vec<_> = train.iter().map(|p| prepare_example(&model, p)).collect();
            let te: Vec<_> = test.iter().map(|p| prepare_example(&model, p)).collect();
            fine_tune(&mut model, &tr, &hyper).map_err(|e| e.to_string())?;
            losses[k] = mean_loss(&model, &te).map_err(|e| e.to_string())?;
        }
        ensure(losses[0] <= losses[1], || format!("seed {seed}: embeddings {:.4} > baseline {:.4}", losses[0], losses[1]))?;
        lines.push(format!("seed {seed}: {:.3} vs {:.3}", losses[0], losses[1]));
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(15 * 60), || format!("took {elapsed:?}"))?;
    Ok(format!("test loss embeddings vs baseline: {}; {elapsed:.1?}", lines.join(", ")))
}

fn exhaustive_best(vectors: &[Vec<f64>], tokens: &[usize], cfg: &SegmenterConfig) -> (usize, f64) {
    let n = vectors.len();
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for mask in 0u32..(1 << (n - 1)) {
        let mut starts = vec![0];
        starts.extend((1..n).filter(|b| mask & (1 << (b - 1)) != 0));
        let mut ends: Vec<usize> = starts[1..].to_vec();
        ends.push(n);
        let mut violations = 0;
        let mut score = -cfg.split_penalty * (starts.len() - 1) as f64;
        let mut feasible = true;
        for (&s, &e) in starts.iter().zip(&ends) {
            if e - s > 1 && tokens[s..e].iter().sum::<usize>() > cfg.max_segment_tokens {
                feasible = false;
                break;
            }
            violations += usize::from(e - s < cfg.min_segment_turns);
            let mut sum = vec![0.0; vectors[0].len()];
            for v in &vectors[s..e] {
                sum.iter_mut().zip(v).for_each(|(a, b)| *a += b);
            }
            score += sum.iter().map(|x| x * x).sum::<f64>().sqrt();
        }
        if feasible && (violations < best.0 || (violations == best.0 && score > best.1)) {
            best = (violations, score);
        }
    }
    best
}

fn segmentation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let embedder = HashEmbedder::new(8, 3);
    let words = ["price", "refund", "outage", "seat", "plan", "invoice", "renew", "login", "team", "data"];
    let mut monotone_checks = 0;
    for case in 0..200 {
        let n = rng.random_range(1..=12);
        let turns: Vec<(SpeakerRole, String)> = (0..n)
            .map(|i| {
                let role = if i % 2 == 0 { SpeakerRole::Agent } else { SpeakerRole::Customer };
                let len = rng.random_range(1..6);
                (role, (0..len).map(|_| words[rng.random_range(0..words.len())]).collect::<Vec<_>>().join(" "))
            })
            .collect();
        let t = Transcript::from_turns("t", turns).map_err(|e| e.to_string())?;
        let cfg = SegmenterConfig {
            max_segment_tokens: rng.random_range(3..25),
            min_segment_turns: rng.random_range(1..4),
            split_penalty: rng.random_range(0.0..1.5),
            ..Default::default()
        };
        let seg = segment_transcript(&t, &embedder, &cfg).map_err(|e| e.to_string())?;
        check_partition(&seg.segments, n).map_err(|e| e.to_string())?;
        let vectors: Vec<Vec<f64>> = t.turns.iter().map(|x| text_vector(&x.text, &embedder as &dyn WordEmbedder)).collect();
        let tokens: Vec<usize> = t.turns.iter().map(|x| x.text.split_whitespace().count()).collect();
        let (best_v, best_s) = exhaustive_best(&vectors, &tokens, &cfg);
        let short = seg.segments.iter().filter(|s| s.turn_span.len() < cfg.min_segment_turns).count();
        ensure(short == best_v, || format!("case {case}: {short} short segments, optimum has {best_v}"))?;
        ensure((seg.objective - best_s).abs() < 1e-9, || format!("case {case}: objective {} vs {best_s}", seg.objective))?;

        let loose = SegmenterConfig { min_segment_turns: 1, ..cfg.clone() };
        let mut prev = usize::MAX;
        for pen in [0.0, 0.1, 0.3, 0.6, 1.0, 2.0, 5.0] {
            let k = segment_transcript(&t, &embedder, &SegmenterConfig { split_penalty: pen, ..loose.clone() })
                .map_err(|e| e.to_string())?
                .segments
                .len();
            ensure(k <= prev, || format!("case {case}: penalty {pen} raised segment count to {k}"))?;
            prev = k;
            monotone_checks += 1;
        }
    }
    Ok(format!("200 transcripts match exhaustive search; {monotone_checks} penalty steps monotone"))
}

/// Every next token: "ok" with 0.999, "bad" with 0.001.
struct TwoWordLm;

impl LanguageModelScorer for TwoWordLm {
    fn vocab_size(&self) -> usize {
        3
    }
    fn tokenize(&self, text: &str) -> Vec<u32> {
        std::iter::once(0).chain(text.split_whitespace().map(|w| if w == "ok" { 1 } else { 2 })).collect()
    }
    fn next_token_distribution(&self, _: &[u32]) -> Vec<f64> {
        vec![0.0, 0.999, 0.001]
    }
}

fn acceptability_routing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rank = |s: HighlightStatus| match s {
        HighlightStatus::Accept => 0,
        HighlightStatus::Review => 1,
        HighlightStatus::Reject => 2,
    };
    for i in 0..10_000 {
        let a = rng.random_range(1.0..300.0);
        let th = AcceptabilityThresholds::new(a, a + rng.random_range(0.0..300.0)).map_err(|e| e.to_string())?;
        let p = rng.random_range(1.0..1000.0);
        let q = p + rng.random_range(0.0..500.0);
        ensure(rank(classify_highlight(p, &th)) <= rank(classify_highlight(q, &th)), || format!("probe {i} not monotone"))?;
    }
    let th = AcceptabilityThresholds::default();
    let perfect: Vec<(String, bool)> =
        (1..=20).map(|k| (if k % 2 == 0 { "ok ".repeat(k) } else { "bad ".repeat(k) }, k % 2 == 0)).collect();
    let inverted: Vec<(String, bool)> = perfect.iter().map(|(s, l)| (s.clone(), !l)).collect();
    let good = evaluate_acceptability(&TwoWordLm, &perfect, &th).map_err(|e| e.to_string())?;
    let bad = evaluate_acceptability(&TwoWordLm, &inverted, &th).map_err(|e| e.to_string())?;
    ensure(good == 1.0 && bad == 0.0, || format!("perfect {good}, inverted {bad}"))?;
    Ok(format!("10000 probes monotone; perfect set {good}, inverted set {bad}"))
}

fn pseudo_label_determinism() -> Outcome {
    let segments = callsum::synthetic::segment_texts(8, 100);
    let templates: Vec<_> = default_templates().into_iter().take(2).collect();
    let clock = FixedClock(DateTime::parse_from_rfc3339("2024-01-01T00:00:00Z").unwrap().to_utc());
    let policy = LabelPolicy { jobs: 4, ..Default::default() };
    let run = || -> Result<Vec<u8>, String> {
        let outcome = label_segments(&segments, &templates, &StubClient::first_words(10), &policy, &clock)
            .map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        write_training_pairs(&mut buf, &outcome.pairs).map_err(|e| e.to_string())?;
        Ok(buf)
    };
    let (a, b) = (run()?, run()?);
    ensure(a == b, || "two runs differ".into())?;
    let lines = a.iter().filter(|&&c| c == b'\n').count();
    ensure(lines == 200, || format!("{lines} pairs, expected 200"))?;

    let pair = |i: usize| TrainingPair {
        dialogue: format!("turn {i}"),
        summary: format!("summary {i}"),
        source: PairSource::Human,
        question: None,
        provenance: None,
        speakers: None,
    };
    let human: Vec<_> = (0..20_000).map(pair).collect();
    let pseudo: Vec<_> = (20_000..41_000).map(pair).collect();
    let mixed = mix_datasets(human, pseudo, 0).map_err(|e| e.to_string())?;
    let (h, p) = (mixed.counts[&PairSource::Human], mixed.counts[&PairSource::Pseudo]);
    ensure(h == 20_000 && p == 21_000 && mixed.pairs.len() == 41_000, || format!("counts {h}/{p}"))?;
    Ok(format!("200 pairs byte-identical across runs ({} bytes); mixed counts human {h}, pseudo {p}", a.len()))
}

fn end_to_end() -> Outcome {
    let assets = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("assets");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out_path = dir.path().join("session.json");
    let (call, config) = (assets.join("sample_call.json"), assets.join("config.toml"));
    let args = [
        "callsum",
        "summarize",
        "--transcript",
        call.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ];
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = callsum::cli::run(args, &mut out, &mut err);
    ensure(code == 0, || format!("exit {code}: {}", String::from_utf8_lossy(&err)))?;
    let raw = std::fs::read_to_string(&out_path).map_err(|e| e.to_string())?;
    let mut session: SummarySession = serde_json::from_str(&raw).map_err(|e| e.to_string())?;
    check_partition(&session.segments, 40).map_err(|e| e.to_string())?;
    let value: serde_json::Value = serde_json::from_str(&raw).map_err(|e| e.to_string())?;
    let statused = value["highlights"].as_array().ok_or("no highlights")?.iter().all(|h| h["status"].is_string());
    ensure(statused && !session.highlights.is_empty(), || "a highlight lacks a status".into())?;
    for s in &session.segments {
        ensure(session.highlights.iter().any(|h| h.highlight.segment_index == s.index), || format!("segment {} has no highlight", s.index))?;
    }

    let store = callsum::service::FileStore::open(dir.path().join("store")).map_err(|e| e.to_string())?;
    store.create_session(&mut session).map_err(|e| e.to_string())?;
    let ids: Vec<String> = session.highlights.iter().map(|h| h.id.clone()).collect();
    let edits = [
        (0, EditAction::Edit, Some("The customer asked about pricing.")),
        (1, EditAction::Discard, None),
        (2, EditAction::Accept, None),
        (1, EditAction::Restore, None),
        (3 % ids.len(), EditAction::Edit, Some("Agent offered a discount.")),
    ];
    for (i, action, text) in edits {
        let (_, s) = callsum::service::store::modify_session(&store, &session.session_id, |s| {
            s.record_edit(EditEvent {
                highlight_id: ids[i % ids.len()].clone(),
                action,
                new_text: text.map(String::from),
                actor: "acceptance".into(),
                timestamp: DateTime::UNIX_EPOCH,
            })
        })
        .map_err(|e| e.to_string())?;
        session = s;
    }
    let reloaded = store.get_session(&session.session_id).map_err(|e| e.to_string())?;
    let (highlights, state) = reloaded.replay().map_err(|e| e.to_string())?;
    ensure(highlights == reloaded.highlights && state == reloaded.state, || "replay diverges from stored state".into())?;
    Ok(format!(
        "{} segments partition 40 turns, {} highlights with status; replay of {} edits matches",
        session.segments.len(),
        session.highlights.len(),
        reloaded.edit_log.len()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("rouge_l_oracle", rouge_oracle),
        ("perplexity_closed_forms", perplexity_closed_forms),
        ("sumsim_composition", composition),
        ("zero_init_equivalence", zero_init_equivalence),
        ("speaker_turn_gradient_check", gradient_check),
        ("toy_directional_replication", directional_replication),
        ("segmentation_oracle", segmentation_oracle),
        ("acceptability_routing", acceptability_routing),
        ("pseudo_label_determinism", pseudo_label_determinism),
        ("end_to_end_cli", end_to_end),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS {name}: {detail} [{:.2?}]", start.elapsed()),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{:.2?}]", start.elapsed());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
