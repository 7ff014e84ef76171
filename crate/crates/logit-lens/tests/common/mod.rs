#![allow(dead_code)]

use std::path::{Path, PathBuf};

use logit_lens::checkpoint::{load_model_dir, read_tensors};
use serde::Deserialize;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn tiny_dir() -> PathBuf {
    fixtures().join("tiny-gpt2")
}

#[derive(Debug, Deserialize)]
pub struct RefPrompt {
    #[serde(default)]
    pub text: Option<String>,
    pub ids: Vec<u32>,
    pub greedy: Vec<u32>,
}

#[derive(Debug, Deserialize)]
struct RefMeta {
    prompts: Vec<RefPrompt>,
}

pub struct RefCase {
    pub prompt: RefPrompt,
    /// `[n, V]`
    pub logits: Vec<f32>,
    /// `[L, n, d]`: layers 0..L-1
    pub hidden: Vec<f32>,
    pub hidden_shape: Vec<usize>,
}

/// Reads `reference.json` + `reference.safetensors` from `dir`.
pub fn load_reference(dir: &Path) -> Vec<RefCase> {
    let meta: RefMeta =
        serde_json::from_str(&std::fs::read_to_string(dir.join("reference.json")).unwrap()).unwrap();
    let mut tensors = read_tensors(&dir.join("reference.safetensors")).unwrap().tensors;
    meta.prompts
        .into_iter()
        .enumerate()
        .map(|(i, prompt)| {
            let (_, logits) = tensors.remove(&format!("logits.{i}")).unwrap();
            let (hidden_shape, hidden) = tensors.remove(&format!("hidden.{i}")).unwrap();
            RefCase { prompt, logits, hidden, hidden_shape }
        })
        .collect()
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

/// Directory holding GPT-2 small, if the environment provides one.
pub fn gpt2_dir() -> Option<PathBuf> {
    let dir = PathBuf::from(std::env::var_os("LOGIT_LENS_MODEL_DIR")?);
    dir.join("model.safetensors").exists().then_some(dir)
}

/// A random GPT-2-vocabulary model small enough for tests.
pub fn small_gpt2_config() -> logit_lens_core::ModelConfig {
    logit_lens_core::ModelConfig {
        n_layers: 4,
        d_model: 32,
        n_heads: 4,
        vocab_size: 50257,
        max_context: 1024,
        ln_epsilon: 1e-5,
    }
}

/// Writes `config.json` + `model.safetensors` for a seeded random model.
pub fn write_synthetic_model(dir: &Path, config: &logit_lens_core::ModelConfig, seed: u64) {
    use logit_lens::checkpoint::{config_json, serialize_tensors};
    std::fs::create_dir_all(dir).unwrap();
    let tensors = logit_lens_core::synthetic::random_tensors(config, seed, 0.2);
    std::fs::write(dir.join("model.safetensors"), serialize_tensors(&tensors, None).unwrap()).unwrap();
    std::fs::write(dir.join("config.json"), config_json(config)).unwrap();
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Token ids fed to the fixed trace behind the golden report files.
pub const GOLDEN_INPUT: [u32; 5] = [39, 259, 262, 290, 256]; // "H" "in" " the" " and" " t"

/// Hand-built sweep records for the golden sweep tables.
pub fn golden_sweep() -> logit_lens::sweep::SweepResult {
    use logit_lens::sweep::{summarize, InstanceRecord, SkippedRecord, SweepConfigRecord};
    let config = SweepConfigRecord {
        k_documents: 3,
        gold_positions: vec![0, 2],
        n_runs: 2,
        seed: 42,
        max_answer_tokens: 8,
        confidence: 0.95,
        template_version: "qa-v1".into(),
    };
    let seqs: [&[u32]; 4] = [&[1, 2, 9, 9, 9], &[9, 9, 1, 9, 9], &[1, 1, 1, 1, 2], &[9, 1, 9, 1, 9]];
    let mut instances = Vec::new();
    for (pi, &position) in config.gold_positions.iter().enumerate() {
        for run in 0..2 {
            for id in 0..3usize {
                let seq = seqs[(pi + run + id) % 4].to_vec();
                let p = logit_lens_core::refinement_profile(&seq, 9).unwrap();
                instances.push(InstanceRecord {
                    position,
                    run,
                    instance_id: id,
                    seed: logit_lens_core::qa::derive_seed(42, run as u64, id as u64),
                    prompt_tokens: 100 + id,
                    gold_token: 9,
                    answer: format!("answer \"{id}\", run {run}"),
                    correct: (id + run + pi) % 3 != 0,
                    top1_by_layer: seq,
                    first_correct_layer: p.first_correct_layer,
                    stabilization_layer: p.stabilization_layer,
                    depth: p.depth,
                });
            }
        }
    }
    let skipped = vec![SkippedRecord {
        position: 2,
        run: 1,
        instance_id: 3,
        reason: "not enough distractors: need 2, have 1".into(),
    }];
    summarize(config, 4, 4, instances, skipped).unwrap()
}

/// Every golden report file as (file name, contents).
pub fn golden_outputs() -> Vec<(String, String)> {
    use logit_lens::report::{self, MetricKind};
    let model = load_model_dir(&tiny_dir()).unwrap();
    let tok = logit_lens::Tokenizer::gpt2().unwrap();
    let tokens = logit_lens_core::TokenSequence::new(GOLDEN_INPUT.to_vec());
    let trace = model.forward_with_taps(&tokens).unwrap();
    let gold = report::next_token_gold(&GOLDEN_INPUT);
    let mut out = Vec::new();
    for metric in MetricKind::ALL {
        let grid = report::build_heatmap(&model, &trace, &GOLDEN_INPUT, metric, Some(&gold), |t| tok.token_text(t)).unwrap();
        out.push((format!("heatmap_{metric}.svg"), report::render_svg(&grid)));
        out.push((format!("heatmap_{metric}.csv"), report::heatmap_csv(&grid).unwrap()));
        out.push((format!("heatmap_{metric}.json"), report::heatmap_json(&grid).unwrap()));
    }
    let sweep = golden_sweep();
    out.push(("sweep.json".into(), report::sweep_json(&sweep).unwrap()));
    out.push(("sweep.csv".into(), report::sweep_csv(&sweep).unwrap()));
    out.push(("curves.csv".into(), report::curves_csv(&sweep).unwrap()));
    out
}

/// Compares against `tests/golden`, rewriting the files first when
/// `UPDATE_GOLDEN=1`. Returns the names that differ.
pub fn check_golden() -> Vec<String> {
    let dir = golden_dir();
    let update = std::env::var("UPDATE_GOLDEN").is_ok_and(|v| v == "1");
    let mut mismatched = Vec::new();
    for (name, text) in golden_outputs() {
        let path = dir.join(&name);
        if update {
            std::fs::create_dir_all(&dir).unwrap();
            std::fs::write(&path, &text).unwrap();
        }
        if std::fs::read_to_string(&path).ok().as_deref() != Some(text.as_str()) {
            mismatched.push(name);
        }
    }
    mismatched
}
