//! Regenerates the bundled toy assets under `assets/`.
//!
//! cargo run --release -p callsum --example make_assets

use std::path::Path;

use callsum::acceptability::{fine_tune_lm, perplexity, AcceptabilityThresholds, BigramLm, LmHyper};
use callsum::summarizer::{
    fine_tune, prepare_example, save_checkpoint, write_training_pairs, DialogModel, DialogModelConfig, TrainHyper,
    Vocab,
};
use callsum::summarizer::tokenizer::DEFAULT_SEP_TOKEN;
use callsum::synthetic::{sales_call, segment_summary_pairs, template_summaries, TOPICS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets");
    std::fs::create_dir_all(&root)?;

    let call = sales_call(7, 40, "sample-call-40");
    std::fs::write(root.join("sample_call.json"), call.to_json())?;

    let pairs = segment_summary_pairs(11, 240, DEFAULT_SEP_TOKEN);
    let mut buf = Vec::new();
    write_training_pairs(&mut buf, &pairs)?;
    std::fs::write(root.join("train_pairs.jsonl"), buf)?;

    let vocab = Vocab::build(pairs.iter().flat_map(|p| [p.dialogue.as_str(), p.summary.as_str()]), 1);
    let config = DialogModelConfig { max_positions: 128, ..DialogModelConfig::toy(vocab.len()) };
    let mut model = DialogModel::new(config, vocab, 0)?;
    let examples: Vec<_> = pairs.iter().map(|p| prepare_example(&model, p)).collect();
    let report = fine_tune(&mut model, &examples, &TrainHyper { epochs: 8, ..Default::default() })?;
    eprintln!("summarizer loss {:.3} -> {:?}", report.initial_loss, report.loss_history.last());
    save_checkpoint(&model, &root.join("toy_checkpoint"))?;

    let mut good = template_summaries(5, 300);
    for _ in 0..30 {
        good.extend(TOPICS.iter().map(|t| t.summary.to_string()));
    }
    let heldout = template_summaries(6, 100);
    let lm_vocab = Vocab::build(good.iter().chain(&heldout).map(String::as_str), 1);
    let mut lm = BigramLm::uniform(lm_vocab);
    fine_tune_lm(&mut lm, &good, &LmHyper { learning_rate: 0.05, epochs: 200 })?;
    lm.save(&root.join("summary_lm.json"))?;
    let mut calib: Vec<f64> = heldout.iter().map(|s| perplexity(s, &lm)).collect::<Result<_, _>>()?;
    calib.extend(TOPICS.iter().map(|t| perplexity(t.summary, &lm)).collect::<Result<Vec<_>, _>>()?);
    let th = AcceptabilityThresholds::calibrate(&calib)?;
    eprintln!("thresholds {th:?}");

    let config = format!(
        r#"store_dir = "store"

[segmenter]
max_segment_tokens = 96
min_segment_turns = 2
embedding_dim = 64
split_penalty = 1.0

[model]
kind = "checkpoint"
path = "toy_checkpoint"

[language_model]
kind = "bigram"
path = "summary_lm.json"

[generation]
max_summary_tokens = 32
num_beams = 3
num_candidates = 2

[thresholds]
tau_accept = {:.3}
tau_reject = {:.3}

[weights]
alpha = 0.3
beta = 0.3

[server]
bind = "127.0.0.1:8080"
"#,
        th.tau_accept, th.tau_reject
    );
    std::fs::write(root.join("config.toml"), config)?;
    Ok(())
}
