use std::collections::HashMap;
use std::sync::Arc;

use chrono::DateTime;
use proptest::prelude::*;

use callsum::acceptability::{classify_highlight, perplexity_of_tokens, AcceptabilityThresholds, BigramLm};
use callsum::pseudo_label::{
    label_segments, mix_datasets, FixedClock, LabelPolicy, PromptTemplate, RecordingClient, ReplayClient, StubClient,
};
use callsum::segmentation::{optimal_segmentation, segment_transcript, HashEmbedder, SegmenterConfig};
use callsum::service::{EditAction, EditEvent, Pipeline, PipelineConfig};
use callsum::summarizer::{EchoFirstSentence, PairSource, TrainingPair, Vocab};
use callsum::sumsim::{compose, lcs_len, rouge_l_f, SumSimWeights};
use callsum::transcript::{check_partition, HighlightStatus, SpeakerRole, Transcript};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// (violations, score, boundaries) of the best partition by brute force.
fn exhaustive(vectors: &[Vec<f64>], tokens: &[usize], cfg: &SegmenterConfig) -> Vec<(usize, f64, Vec<usize>)> {
    let n = vectors.len();
    let mut out = Vec::new();
    for mask in 0u32..(1 << (n - 1)) {
        let bounds: Vec<usize> = (1..n).filter(|b| mask & (1 << (b - 1)) != 0).collect();
        let mut starts = vec![0];
        starts.extend(&bounds);
        let mut ends = bounds.clone();
        ends.push(n);
        let mut feasible = true;
        let mut violations = 0;
        let mut score = -cfg.split_penalty * bounds.len() as f64;
        for (&s, &e) in starts.iter().zip(&ends) {
            let toks: usize = tokens[s..e].iter().sum();
            if e - s > 1 && toks > cfg.max_segment_tokens {
                feasible = false;
            }
            if e - s < cfg.min_segment_turns {
                violations += 1;
            }
            let mut sum = vec![0.0; vectors[0].len()];
            for v in &vectors[s..e] {
                for (a, b) in sum.iter_mut().zip(v) {
                    *a += b;
                }
            }
            score += norm(&sum);
        }
        if feasible {
            out.push((violations, score, bounds));
        }
    }
    out
}

fn unit_vectors(n: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, dim), n).prop_map(|vs| {
        vs.into_iter()
            .map(|v| {
                let n = norm(&v);
                if n < 1e-9 {
                    v
                } else {
                    v.iter().map(|x| x / n).collect()
                }
            })
            .collect()
    })
}

fn seg_case() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>, SegmenterConfig)> {
    (1usize..=9).prop_flat_map(|n| {
        (
            unit_vectors(n, 3),
            prop::collection::vec(1usize..8, n),
            (4usize..30, 1usize..4, 0.0f64..1.5),
        )
            .prop_map(|(v, t, (max, min, pen))| {
                (v, t, SegmenterConfig { max_segment_tokens: max, min_segment_turns: min, split_penalty: pen, ..Default::default() })
            })
    })
}

fn turns_text() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::collection::vec("[a-f]{1,3}", 1..6).prop_map(|w| w.join(" ")), 1..14)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn dp_matches_exhaustive_search((vectors, tokens, cfg) in seg_case()) {
        let (bounds, objective, _) = optimal_segmentation(&vectors, &tokens, &cfg).unwrap();
        let all = exhaustive(&vectors, &tokens, &cfg);
        let best_v = all.iter().map(|c| c.0).min().unwrap();
        let best_s = all.iter().filter(|c| c.0 == best_v).map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
        let mine = all.iter().find(|c| c.2 == bounds).expect("DP result is feasible");
        prop_assert_eq!(mine.0, best_v);
        prop_assert!((mine.1 - best_s).abs() < 1e-9);
        prop_assert!((objective - best_s).abs() < 1e-9);
    }

    #[test]
    fn more_penalty_never_adds_segments((vectors, tokens, cfg) in seg_case(), extra in 0.0f64..2.0) {
        let cfg = SegmenterConfig { min_segment_turns: 1, ..cfg };
        let (low, _, _) = optimal_segmentation(&vectors, &tokens, &cfg).unwrap();
        let high_cfg = SegmenterConfig { split_penalty: cfg.split_penalty + extra, ..cfg };
        let (high, _, _) = optimal_segmentation(&vectors, &tokens, &high_cfg).unwrap();
        prop_assert!(high.len() <= low.len());
    }

    #[test]
    fn segments_partition_any_transcript(texts in turns_text(), max in 1usize..20, min in 1usize..4) {
        let t = Transcript::from_turns("t", texts.iter().enumerate().map(|(i, s)| {
            (if i % 2 == 0 { SpeakerRole::Agent } else { SpeakerRole::Customer }, s.as_str())
        })).unwrap();
        let cfg = SegmenterConfig { max_segment_tokens: max, min_segment_turns: min, ..Default::default() };
        let seg = segment_transcript(&t, &HashEmbedder::new(8, 1), &cfg).unwrap();
        prop_assert!(check_partition(&seg.segments, t.len()).is_ok());
    }

    #[test]
    fn rouge_matches_lcs_oracle_and_is_symmetric(
        a in prop::collection::vec(0u8..6, 0..20),
        b in prop::collection::vec(0u8..6, 0..20),
    ) {
        let mut table = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for i in 0..a.len() {
            for j in 0..b.len() {
                table[i + 1][j + 1] = if a[i] == b[j] { table[i][j] + 1 } else { table[i][j + 1].max(table[i + 1][j]) };
            }
        }
        let l = table[a.len()][b.len()];
        prop_assert_eq!(lcs_len(&a, &b), l);
        let expected = if l == 0 { 0.0 } else {
            let (p, r) = (l as f64 / a.len() as f64, l as f64 / b.len() as f64);
            2.0 * p * r / (p + r)
        };
        prop_assert!((rouge_l_f(&a, &b) - expected).abs() < 1e-12);
        prop_assert!((rouge_l_f(&a, &b) - rouge_l_f(&b, &a)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&rouge_l_f(&a, &b)));
    }

    #[test]
    fn compose_is_bounded_and_monotone(
        s in prop::array::uniform4(0.0f64..=1.0),
        bump in 0.0f64..=1.0,
        which in 0usize..4,
        alpha in 0.0f64..=1.0,
        beta in 0.0f64..=1.0,
    ) {
        let w = SumSimWeights::new(alpha, beta).unwrap();
        let base = compose(s[0], s[1], Some(s[2]), Some(s[3]), &w).unwrap();
        prop_assert!((0.0..=1.0).contains(&base.sumsim));
        let mut t = s;
        t[which] = (t[which] + bump).min(1.0);
        let up = compose(t[0], t[1], Some(t[2]), Some(t[3]), &w).unwrap();
        prop_assert!(up.sumsim >= base.sumsim - 1e-12);
    }

    #[test]
    fn missing_components_drop_their_weight(s in prop::array::uniform4(0.0f64..=1.0)) {
        let w = SumSimWeights::default();
        let r = compose(s[0], s[1], None, None, &w).unwrap();
        prop_assert!(r.flags.informativeness_undefined && r.flags.factuality_skipped);
        prop_assert!((r.sumsim - (s[0] + s[1]) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn routing_is_monotone(a in 1.0f64..500.0, gap in 0.0f64..500.0, p in 0.5f64..2000.0, q in 0.5f64..2000.0) {
        let th = AcceptabilityThresholds::new(a, a + gap).unwrap();
        let rank = |s: HighlightStatus| match s {
            HighlightStatus::Accept => 0,
            HighlightStatus::Review => 1,
            HighlightStatus::Reject => 2,
        };
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        prop_assert!(rank(classify_highlight(lo, &th)) <= rank(classify_highlight(hi, &th)));
    }

    #[test]
    fn uniform_lm_perplexity_is_vocab_size(extra in 0usize..40, ids in prop::collection::vec(0u32..5, 1..30)) {
        let words: Vec<String> = (0..extra).map(|i| format!("w{i}")).collect();
        let vocab = Vocab::build(words.iter().map(String::as_str), 1);
        let v = vocab.len();
        let lm = BigramLm::uniform(vocab);
        let tokens: Vec<u32> = std::iter::once(0).chain(ids.iter().map(|i| i % v as u32)).collect();
        let pp = perplexity_of_tokens(&tokens, &lm).unwrap();
        prop_assert!((pp - v as f64).abs() < 1e-9 * v as f64);
    }

    #[test]
    fn mixing_preserves_the_multiset(h in 0usize..30, p in 0usize..30, seed in any::<u64>()) {
        prop_assume!(h + p > 0);
        let pair = |i: usize, source| TrainingPair {
            dialogue: format!("d{i}"), summary: format!("s{i}"), source, question: None, provenance: None, speakers: None,
        };
        let human: Vec<_> = (0..h).map(|i| pair(i, PairSource::Pseudo)).collect();
        let pseudo: Vec<_> = (h..h + p).map(|i| pair(i, PairSource::Human)).collect();
        let mixed = mix_datasets(human, pseudo, seed).unwrap();
        prop_assert_eq!(mixed.counts[&PairSource::Human], h);
        prop_assert_eq!(mixed.counts[&PairSource::Pseudo], p);
        let mut ids: Vec<usize> = mixed.pairs.iter().map(|x| x.dialogue[1..].parse().unwrap()).collect();
        ids.sort_unstable();
        prop_assert_eq!(ids, (0..h + p).collect::<Vec<_>>());
        for x in &mixed.pairs {
            let idx: usize = x.dialogue[1..].parse().unwrap();
            prop_assert_eq!(x.source, if idx < h { PairSource::Human } else { PairSource::Pseudo });
        }
    }

    #[test]
    fn replay_reproduces_a_recorded_run(segs in prop::collection::vec("[a-z]{1,6}( [a-z]{1,6}){0,5}", 1..6), k in 1usize..4) {
        let templates = vec![PromptTemplate::with_question("What happened?"), PromptTemplate::with_question("Who called?")];
        let policy = LabelPolicy { backoff_ms: 0, ..Default::default() };
        let clock = FixedClock(DateTime::UNIX_EPOCH);
        let recorder = RecordingClient::new(StubClient::first_words(k));
        let live = label_segments(&segs, &templates, &recorder, &policy, &clock).unwrap();
        let replay = ReplayClient::from_records(recorder.records(), "stub");
        let replayed = label_segments(&segs, &templates, &replay, &policy, &clock).unwrap();
        prop_assert_eq!(live.pairs.len(), replayed.pairs.len());
        for (a, b) in live.pairs.iter().zip(&replayed.pairs) {
            prop_assert_eq!(&a.summary, &b.summary);
            prop_assert_eq!(&a.dialogue, &b.dialogue);
        }
    }

    #[test]
    fn edit_log_replay_reproduces_state(
        events in prop::collection::vec((0usize..8, 0u8..4, "[a-z]{0,8}"), 0..25),
        finalize_at in prop::option::of(0usize..25),
    ) {
        let cfg = PipelineConfig {
            segmenter: SegmenterConfig { max_segment_tokens: 12, min_segment_turns: 1, ..Default::default() },
            ..Default::default()
        };
        let lm = BigramLm::uniform(Vocab::build(std::iter::empty::<&str>(), 1));
        let pipeline = Pipeline::with_components(cfg, Arc::new(EchoFirstSentence::default()), Arc::new(lm), Arc::new(HashEmbedder::new(8, 0)));
        let t = callsum::synthetic::sales_call(3, 10, "call");
        let mut s = pipeline.summarize(&t, "s".into(), DateTime::UNIX_EPOCH).unwrap();
        let ids: Vec<String> = s.highlights.iter().map(|h| h.id.clone()).collect();
        for (i, (h, a, text)) in events.into_iter().enumerate() {
            if finalize_at == Some(i) {
                let _ = s.finalize(DateTime::UNIX_EPOCH);
            }
            let action = [EditAction::Accept, EditAction::Edit, EditAction::Discard, EditAction::Restore][a as usize];
            let _ = s.record_edit(EditEvent {
                highlight_id: ids.get(h).cloned().unwrap_or_else(|| "missing".into()),
                action,
                new_text: (action == EditAction::Edit).then_some(text),
                actor: "tester".into(),
                timestamp: DateTime::UNIX_EPOCH,
            });
        }
        let (highlights, state) = s.replay().unwrap();
        prop_assert_eq!(&highlights, &s.highlights);
        prop_assert_eq!(state, s.state);
        let by_id: HashMap<_, _> = s.highlights.iter().map(|h| (h.id.clone(), h)).collect();
        prop_assert_eq!(by_id.len(), s.highlights.len());
    }
}
