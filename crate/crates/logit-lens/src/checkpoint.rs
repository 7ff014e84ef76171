//! Safetensors checkpoints and Hugging Face `config.json`.
//!
//! Tensor names follow the Hugging Face GPT-2 export. A leading
//! `transformer.` (as written by `GPT2LMHeadModel`) is stripped, and the
//! causal-mask buffers `h.N.attn.bias` / `h.N.attn.masked_bias` are ignored:
//!
//! | name                         | shape        | role                          |
//! |------------------------------|--------------|-------------------------------|
//! | `wte.weight`                 | `[V, d]`     | token embedding, tied `W_U`   |
//! | `wpe.weight`                 | `[ctx, d]`   | position embedding            |
//! | `h.N.ln_1.{weight,bias}`     | `[d]`        | pre-attention LayerNorm       |
//! | `h.N.attn.c_attn.weight`     | `[d, 3d]`    | fused Q, K, V projection      |
//! | `h.N.attn.c_attn.bias`       | `[3d]`       |                               |
//! | `h.N.attn.c_proj.{weight,bias}` | `[d, d]`, `[d]` | attention output      |
//! | `h.N.ln_2.{weight,bias}`     | `[d]`        | pre-MLP LayerNorm             |
//! | `h.N.mlp.c_fc.{weight,bias}` | `[d, 4d]`, `[4d]` | MLP up projection        |
//! | `h.N.mlp.c_proj.{weight,bias}` | `[4d, d]`, `[d]` | MLP down projection     |
//! | `ln_f.{weight,bias}`         | `[d]`        | final LayerNorm (`LayerNorm_L`) |
//! | `lm_head.weight` (optional)  | `[V, d]`     | untied `W_U`                  |
//!
//! F16 and BF16 tensors are widened to F32 on load.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use logit_lens_core::model::TensorSource;
use logit_lens_core::{Model, ModelConfig};
use safetensors::{Dtype, SafeTensors};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::tokenizer::Tokenizer;

/// All tensors of a safetensors file, widened to f32, keyed by canonical name.
#[derive(Debug, Clone, Default)]
pub struct TensorFile {
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
    pub metadata: HashMap<String, String>,
}

impl TensorSource for TensorFile {
    fn tensor(&self, name: &str) -> Option<(Vec<usize>, Vec<f32>)> {
        self.tensors.get(name).cloned()
    }
}

fn canonical_name(name: &str) -> Option<&str> {
    let name = name.strip_prefix("transformer.").unwrap_or(name);
    if name.ends_with(".attn.bias") || name.ends_with(".attn.masked_bias") {
        return None;
    }
    Some(name)
}

/// Parses a safetensors buffer.
pub fn parse_tensors(bytes: &[u8]) -> Result<TensorFile> {
    let (_, meta) =
        SafeTensors::read_metadata(bytes).map_err(|e| Error::Safetensors(e.to_string()))?;
    let metadata = meta.metadata().clone().unwrap_or_default();
    let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Safetensors(e.to_string()))?;
    let mut tensors = BTreeMap::new();
    for (name, view) in st.tensors() {
        let Some(canonical) = canonical_name(&name) else {
            continue;
        };
        let data = widen(&name, view.dtype(), view.data())?;
        tensors.insert(canonical.to_string(), (view.shape().to_vec(), data));
    }
    Ok(TensorFile { tensors, metadata })
}

fn widen(name: &str, dtype: Dtype, raw: &[u8]) -> Result<Vec<f32>> {
    Ok(match dtype {
        Dtype::F32 => raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect(),
        Dtype::F16 => raw
            .chunks_exact(2)
            .map(|b| half::f16::from_le_bytes([b[0], b[1]]).to_f32())
            .collect(),
        Dtype::BF16 => raw
            .chunks_exact(2)
            .map(|b| half::bf16::from_le_bytes([b[0], b[1]]).to_f32())
            .collect(),
        other => {
            return Err(Error::UnsupportedDtype {
                name: name.into(),
                dtype: format!("{other:?}"),
            })
        }
    })
}

pub fn read_tensors(path: &Path) -> Result<TensorFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_tensors(&bytes)
}

/// Serializes f32 tensors (little-endian) with optional string metadata.
pub fn serialize_tensors(
    tensors: &BTreeMap<String, (Vec<usize>, Vec<f32>)>,
    metadata: Option<HashMap<String, String>>,
) -> Result<Vec<u8>> {
    let raw: Vec<(&String, Vec<usize>, Vec<u8>)> = tensors
        .iter()
        .map(|(name, (shape, data))| {
            let bytes = data.iter().flat_map(|v| v.to_le_bytes()).collect();
            (name, shape.clone(), bytes)
        })
        .collect();
    let mut views = Vec::with_capacity(raw.len());
    for (name, shape, bytes) in &raw {
        let view = safetensors::tensor::TensorView::new(Dtype::F32, shape.clone(), bytes)
            .map_err(|e| Error::Safetensors(e.to_string()))?;
        views.push((name.as_str(), view));
    }
    safetensors::serialize(views, metadata).map_err(|e| Error::Safetensors(e.to_string()))
}

/// Loads and validates a checkpoint against `config`.
pub fn load_checkpoint(weights_path: &Path, config: ModelConfig) -> Result<Model> {
    let file = read_tensors(weights_path)?;
    Ok(Model::from_tensors(config, &file)?)
}

pub const CONFIG_FILE: &str = "config.json";
pub const WEIGHTS_FILE: &str = "model.safetensors";

/// Loads `config.json` + `model.safetensors` from a model directory.
pub fn load_model_dir(dir: &Path) -> Result<Model> {
    let config = read_config(&dir.join(CONFIG_FILE))?;
    load_checkpoint(&dir.join(WEIGHTS_FILE), config)
}

/// The directory's `vocab.json` + `merges.txt`, or the bundled GPT-2 files
/// when the directory has neither.
pub fn load_tokenizer_dir(dir: &Path) -> Result<Tokenizer> {
    let vocab = dir.join("vocab.json");
    let merges = dir.join("merges.txt");
    match (vocab.exists(), merges.exists()) {
        (true, true) => Tokenizer::from_files(&vocab, &merges),
        (false, false) => Tokenizer::gpt2(),
        _ => Err(Error::Tokenizer(format!(
            "{} has only one of vocab.json and merges.txt",
            dir.display()
        ))),
    }
}

/// The subset of a Hugging Face GPT-2 `config.json` that fixes the shapes.
#[derive(Debug, Clone, Deserialize)]
struct HfConfig {
    n_layer: usize,
    n_embd: usize,
    n_head: usize,
    vocab_size: usize,
    #[serde(alias = "n_ctx")]
    n_positions: usize,
    #[serde(default = "default_eps")]
    layer_norm_epsilon: f32,
}

fn default_eps() -> f32 {
    1e-5
}

pub fn parse_config(json: &str) -> Result<ModelConfig> {
    let hf: HfConfig = serde_json::from_str(json).map_err(|e| Error::json("config.json", e))?;
    let config = ModelConfig {
        n_layers: hf.n_layer,
        d_model: hf.n_embd,
        n_heads: hf.n_head,
        vocab_size: hf.vocab_size,
        max_context: hf.n_positions,
        ln_epsilon: hf.layer_norm_epsilon,
    };
    config.validate()?;
    Ok(config)
}

pub fn read_config(path: &Path) -> Result<ModelConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// Writes a Hugging Face style `config.json` for `config`.
pub fn config_json(config: &ModelConfig) -> String {
    serde_json::json!({
        "model_type": "gpt2",
        "n_layer": config.n_layers,
        "n_embd": config.d_model,
        "n_head": config.n_heads,
        "vocab_size": config.vocab_size,
        "n_positions": config.max_context,
        "layer_norm_epsilon": config.ln_epsilon,
    })
    .to_string()
}
