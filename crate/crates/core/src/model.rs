//! GPT-2-class decoder with hidden-state taps.
//!
//! Blocks are pre-norm: `x += attn(ln_1(x)); x += mlp(ln_2(x))`. Hidden state
//! row 0 is the token + position embedding sum; row `l` is the residual stream
//! after block `l`. The final logits are `W_U · ln_f(h_L)`, computed by
//! [`Model::project`], which the lens reuses for every other layer.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::math::{self, LayerNorm, Linear};

/// Provides named `f32` tensors to [`Model::from_tensors`].
///
/// Names follow the Hugging Face GPT-2 layout without the `transformer.`
/// prefix; see [`expected_tensors`].
pub trait TensorSource {
    /// Shape and row-major data of `name`, if present.
    fn tensor(&self, name: &str) -> Option<(Vec<usize>, Vec<f32>)>;
}

impl TensorSource for BTreeMap<String, (Vec<usize>, Vec<f32>)> {
    fn tensor(&self, name: &str) -> Option<(Vec<usize>, Vec<f32>)> {
        self.get(name).cloned()
    }
}

/// Name of the optional untied unembedding matrix. When absent, `wte.weight`
/// doubles as `W_U`.
pub const UNTIED_UNEMBEDDING: &str = "lm_head.weight";

/// Every tensor a checkpoint must provide, with its shape.
pub fn expected_tensors(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = config.d_model;
    let mut out = vec![
        ("wte.weight".into(), vec![config.vocab_size, d]),
        ("wpe.weight".into(), vec![config.max_context, d]),
    ];
    for i in 0..config.n_layers {
        let p = |s: &str| format!("h.{i}.{s}");
        out.extend([
            (p("ln_1.weight"), vec![d]),
            (p("ln_1.bias"), vec![d]),
            (p("attn.c_attn.weight"), vec![d, 3 * d]),
            (p("attn.c_attn.bias"), vec![3 * d]),
            (p("attn.c_proj.weight"), vec![d, d]),
            (p("attn.c_proj.bias"), vec![d]),
            (p("ln_2.weight"), vec![d]),
            (p("ln_2.bias"), vec![d]),
            (p("mlp.c_fc.weight"), vec![d, 4 * d]),
            (p("mlp.c_fc.bias"), vec![4 * d]),
            (p("mlp.c_proj.weight"), vec![4 * d, d]),
            (p("mlp.c_proj.bias"), vec![d]),
        ]);
    }
    out.push(("ln_f.weight".into(), vec![d]));
    out.push(("ln_f.bias".into(), vec![d]));
    out
}

/// A non-empty-by-use list of vocabulary indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence(pub Vec<u32>);

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<u32> {
        self.0
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(ids: Vec<u32>) -> Self {
        Self(ids)
    }
}

/// Residual-stream values for every layer and position of one pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualStream {
    data: Vec<f32>,
    n_states: usize,
    n_positions: usize,
    d_model: usize,
}

impl ResidualStream {
    /// Assembles a stream from `(n_states x n_positions x d_model)` data.
    pub fn from_parts(
        data: Vec<f32>,
        n_states: usize,
        n_positions: usize,
        d_model: usize,
    ) -> Result<Self> {
        let expected = n_states * n_positions * d_model;
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                name: "residual stream".into(),
                expected: vec![n_states, n_positions, d_model],
                found: vec![data.len()],
            });
        }
        Ok(Self {
            data,
            n_states,
            n_positions,
            d_model,
        })
    }

    /// `h_layer` at `position`.
    pub fn state(&self, layer: usize, position: usize) -> Result<&[f32]> {
        if layer >= self.n_states {
            return Err(Error::Index {
                what: "layer",
                index: layer,
                len: self.n_states,
            });
        }
        if position >= self.n_positions {
            return Err(Error::Index {
                what: "position",
                index: position,
                len: self.n_positions,
            });
        }
        let start = (layer * self.n_positions + position) * self.d_model;
        Ok(&self.data[start..start + self.d_model])
    }

    /// All positions of one layer, `n_positions x d_model`.
    pub fn layer(&self, layer: usize) -> &[f32] {
        let stride = self.n_positions * self.d_model;
        &self.data[layer * stride..(layer + 1) * stride]
    }

    /// Number of layer rows, `L + 1`.
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_positions(&self) -> usize {
        self.n_positions
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    /// `[n_states, n_positions, d_model]`.
    pub fn shape(&self) -> [usize; 3] {
        [self.n_states, self.n_positions, self.d_model]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

impl AsRef<ResidualStream> for ResidualStream {
    fn as_ref(&self) -> &ResidualStream {
        self
    }
}

/// Hidden states plus final logits for every position.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStateTrace {
    pub states: ResidualStream,
    final_logits: Vec<f32>,
    vocab_size: usize,
}

impl HiddenStateTrace {
    pub fn final_logits(&self, position: usize) -> Result<&[f32]> {
        let n = self.states.n_positions();
        if position >= n {
            return Err(Error::Index {
                what: "position",
                index: position,
                len: n,
            });
        }
        Ok(&self.final_logits[position * self.vocab_size..(position + 1) * self.vocab_size])
    }

    pub fn n_positions(&self) -> usize {
        self.states.n_positions()
    }
}

impl AsRef<ResidualStream> for HiddenStateTrace {
    fn as_ref(&self) -> &ResidualStream {
        &self.states
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln_1: LayerNorm,
    attn_qkv: Linear,
    attn_proj: Linear,
    ln_2: LayerNorm,
    mlp_fc: Linear,
    mlp_proj: Linear,
}

/// Per-layer attention keys and values for incremental decoding.
#[derive(Debug, Clone)]
pub struct KvCache {
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    len: usize,
}

impl KvCache {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            keys: vec![Vec::new(); config.n_layers],
            values: vec![Vec::new(); config.n_layers],
            len: 0,
        }
    }

    /// Number of cached positions.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Loaded, validated, immutable model weights.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    wte: Vec<f32>,
    wpe: Vec<f32>,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    unembedding: Option<Vec<f32>>,
}

impl Model {
    /// Builds a model, checking every tensor's presence, shape and finiteness.
    pub fn from_tensors(config: ModelConfig, source: &impl TensorSource) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut fetched: BTreeMap<String, Vec<f32>> = BTreeMap::new();
        for (name, shape) in expected_tensors(&config) {
            let data = fetch(source, &name, &shape)?;
            fetched.insert(name, data);
        }
        let unembedding = match source.tensor(UNTIED_UNEMBEDDING) {
            Some(_) => Some(fetch(source, UNTIED_UNEMBEDDING, &[config.vocab_size, d])?),
            None => None,
        };
        let mut take = |name: String| fetched.remove(&name).expect("fetched above");
        let eps = config.ln_epsilon;
        let wte = take("wte.weight".into());
        let wpe = take("wpe.weight".into());
        let mut blocks = Vec::with_capacity(config.n_layers);
        for i in 0..config.n_layers {
            let mut t = |s: &str| take(format!("h.{i}.{s}"));
            blocks.push(Block {
                ln_1: LayerNorm {
                    gain: t("ln_1.weight"),
                    bias: t("ln_1.bias"),
                    epsilon: eps,
                },
                attn_qkv: Linear {
                    weight: t("attn.c_attn.weight"),
                    bias: t("attn.c_attn.bias"),
                    d_in: d,
                    d_out: 3 * d,
                },
                attn_proj: Linear {
                    weight: t("attn.c_proj.weight"),
                    bias: t("attn.c_proj.bias"),
                    d_in: d,
                    d_out: d,
                },
                ln_2: LayerNorm {
                    gain: t("ln_2.weight"),
                    bias: t("ln_2.bias"),
                    epsilon: eps,
                },
                mlp_fc: Linear {
                    weight: t("mlp.c_fc.weight"),
                    bias: t("mlp.c_fc.bias"),
                    d_in: d,
                    d_out: 4 * d,
                },
                mlp_proj: Linear {
                    weight: t("mlp.c_proj.weight"),
                    bias: t("mlp.c_proj.bias"),
                    d_in: 4 * d,
                    d_out: d,
                },
            });
        }
        let ln_f = LayerNorm {
            gain: take("ln_f.weight".into()),
            bias: take("ln_f.bias".into()),
            epsilon: eps,
        };
        Ok(Self {
            config,
            wte,
            wpe,
            blocks,
            ln_f,
            unembedding,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// `W_U`, `|V| x d` row-major.
    pub fn unembedding(&self) -> &[f32] {
        self.unembedding.as_deref().unwrap_or(&self.wte)
    }

    /// The final layer norm (`LayerNorm_L`).
    pub fn final_norm(&self) -> &LayerNorm {
        &self.ln_f
    }

    /// `W_U · LayerNorm_L(h)`. LayerNorm and dot products run in f64, the
    /// result is rounded to f32.
    pub fn project(&self, hidden: &[f32]) -> Result<Vec<f32>> {
        Ok(self.project_many(&[hidden])?.pop().unwrap_or_default())
    }

    /// [`Model::project`] for several states in one pass over `W_U`. Each
    /// result is bitwise identical to projecting that state alone.
    pub fn project_many(&self, hidden: &[&[f32]]) -> Result<Vec<Vec<f32>>> {
        let d = self.config.d_model;
        if let Some(bad) = hidden.iter().find(|h| h.len() != d) {
            return Err(Error::ShapeMismatch {
                name: "hidden state".into(),
                expected: vec![d],
                found: vec![bad.len()],
            });
        }
        let normed: Vec<Vec<f64>> = hidden.iter().map(|h| self.ln_f.forward_f64(h)).collect();
        let mut out = vec![Vec::with_capacity(self.config.vocab_size); hidden.len()];
        for row in self.unembedding().chunks_exact(d) {
            for (o, x) in out.iter_mut().zip(&normed) {
                o.push(math::dot_f64(row, x) as f32);
            }
        }
        Ok(out)
    }

    fn check_tokens(&self, tokens: &[u32], already: usize) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        let total = already + tokens.len();
        if total > self.config.max_context {
            return Err(Error::ContextOverflow {
                len: total,
                max: self.config.max_context,
            });
        }
        if let Some(&bad) = tokens
            .iter()
            .find(|&&t| t as usize >= self.config.vocab_size)
        {
            return Err(Error::TokenOutOfRange {
                token: bad,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Runs `tokens` through the network after whatever `cache` already holds.
    /// Returns the residual stream of the new positions at the last layer; when
    /// `taps` is given, every layer's rows are pushed onto it.
    fn advance(
        &self,
        tokens: &[u32],
        cache: &mut KvCache,
        mut taps: Option<&mut Vec<Vec<f32>>>,
    ) -> Result<Vec<f32>> {
        self.check_tokens(tokens, cache.len)?;
        let d = self.config.d_model;
        let m = tokens.len();
        let pos0 = cache.len;
        let mut x = vec![0.0f32; m * d];
        for (i, (row, &tok)) in x.chunks_exact_mut(d).zip(tokens).enumerate() {
            let te = &self.wte[tok as usize * d..(tok as usize + 1) * d];
            let pe = &self.wpe[(pos0 + i) * d..(pos0 + i + 1) * d];
            for ((v, &a), &b) in row.iter_mut().zip(te).zip(pe) {
                *v = a + b;
            }
        }
        if let Some(t) = taps.as_deref_mut() {
            t.push(x.clone());
        }
        for (layer, block) in self.blocks.iter().enumerate() {
            self.block_forward(block, layer, &mut x, m, pos0, cache);
            if let Some(t) = taps.as_deref_mut() {
                t.push(x.clone());
            }
        }
        cache.len += m;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("hidden states".into()));
        }
        Ok(x)
    }

    fn block_forward(
        &self,
        block: &Block,
        layer: usize,
        x: &mut [f32],
        m: usize,
        pos0: usize,
        cache: &mut KvCache,
    ) {
        let d = self.config.d_model;
        let n_heads = self.config.n_heads;
        let hd = self.config.head_dim();
        let scale = 1.0 / libm::sqrtf(hd as f32);

        let mut h = x.to_vec();
        block.ln_1.forward_inplace(&mut h);
        let qkv = block.attn_qkv.forward(&h, m);
        let keys = &mut cache.keys[layer];
        let values = &mut cache.values[layer];
        for row in qkv.chunks_exact(3 * d) {
            keys.extend_from_slice(&row[d..2 * d]);
            values.extend_from_slice(&row[2 * d..]);
        }

        let mut attn = vec![0.0f32; m * d];
        let mut scores = vec![0.0f32; pos0 + m];
        for i in 0..m {
            let p = pos0 + i;
            let q = &qkv[i * 3 * d..i * 3 * d + d];
            for head in 0..n_heads {
                let off = head * hd;
                let qh = &q[off..off + hd];
                let s = &mut scores[..=p];
                for (j, sj) in s.iter_mut().enumerate() {
                    let kh = &keys[j * d + off..j * d + off + hd];
                    *sj = math::dot_f32(qh, kh) * scale;
                }
                math::softmax_inplace(s);
                let out = &mut attn[i * d + off..i * d + off + hd];
                for (j, &w) in s.iter().enumerate() {
                    let vh = &values[j * d + off..j * d + off + hd];
                    for (o, &v) in out.iter_mut().zip(vh) {
                        *o += w * v;
                    }
                }
            }
        }
        let proj = block.attn_proj.forward(&attn, m);
        for (a, b) in x.iter_mut().zip(&proj) {
            *a += b;
        }

        let mut h = x.to_vec();
        block.ln_2.forward_inplace(&mut h);
        let mut hidden = block.mlp_fc.forward(&h, m);
        for v in hidden.iter_mut() {
            *v = math::gelu(*v);
        }
        let out = block.mlp_proj.forward(&hidden, m);
        for (a, b) in x.iter_mut().zip(&out) {
            *a += b;
        }
    }

    /// Hidden states of every layer without projecting to the vocabulary.
    pub fn residual_stream(&self, tokens: &TokenSequence) -> Result<ResidualStream> {
        let mut cache = KvCache::new(&self.config);
        let mut taps = Vec::with_capacity(self.config.n_states());
        self.advance(tokens.ids(), &mut cache, Some(&mut taps))?;
        let n = tokens.len();
        ResidualStream::from_parts(taps.concat(), self.config.n_states(), n, self.config.d_model)
    }

    /// Instrumented forward pass: all hidden states plus final logits.
    pub fn forward_with_taps(&self, tokens: &TokenSequence) -> Result<HiddenStateTrace> {
        let states = self.residual_stream(tokens)?;
        let last = states.layer(self.config.n_layers);
        let rows: Vec<&[f32]> = last.chunks_exact(self.config.d_model).collect();
        let final_logits = self.project_many(&rows)?.concat();
        if final_logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("final logits".into()));
        }
        Ok(HiddenStateTrace {
            states,
            final_logits,
            vocab_size: self.config.vocab_size,
        })
    }

    /// Greedy decoding with a KV cache.
    ///
    /// Each step appends the argmax of the final-layer logits (lowest id on
    /// ties). Stops after `max_new` tokens or right after emitting a token for
    /// which `stop` returns true. The returned sequence includes the prompt.
    pub fn greedy_generate(
        &self,
        prompt: &TokenSequence,
        max_new: usize,
        stop: impl Fn(u32) -> bool,
    ) -> Result<TokenSequence> {
        self.generate(prompt, max_new, stop, None)
    }

    /// Like [`Model::greedy_generate`], also returning the prompt's residual
    /// stream from the same prefill pass.
    pub fn generate_with_stream(
        &self,
        prompt: &TokenSequence,
        max_new: usize,
        stop: impl Fn(u32) -> bool,
    ) -> Result<(ResidualStream, TokenSequence)> {
        let mut taps = Vec::with_capacity(self.config.n_states());
        let out = self.generate(prompt, max_new, stop, Some(&mut taps))?;
        let stream = ResidualStream::from_parts(
            taps.concat(),
            self.config.n_states(),
            prompt.len(),
            self.config.d_model,
        )?;
        Ok((stream, out))
    }

    fn generate(
        &self,
        prompt: &TokenSequence,
        max_new: usize,
        stop: impl Fn(u32) -> bool,
        taps: Option<&mut Vec<Vec<f32>>>,
    ) -> Result<TokenSequence> {
        if prompt.is_empty() {
            return Err(Error::EmptyInput);
        }
        if prompt.len() + max_new > self.config.max_context {
            return Err(Error::ContextOverflow {
                len: prompt.len() + max_new,
                max: self.config.max_context,
            });
        }
        let mut out = prompt.ids().to_vec();
        let d = self.config.d_model;
        let mut cache = KvCache::new(&self.config);
        let mut last = self.advance(prompt.ids(), &mut cache, taps)?;
        for step in 0..max_new {
            let h = &last[last.len() - d..];
            let logits = self.project(h)?;
            let next = math::argmax(&logits) as u32;
            out.push(next);
            if stop(next) || step + 1 == max_new {
                break;
            }
            last = self.advance(&[next], &mut cache, None)?;
        }
        Ok(TokenSequence(out))
    }
}

fn fetch(source: &impl TensorSource, name: &str, shape: &[usize]) -> Result<Vec<f32>> {
    let (found, data) = source
        .tensor(name)
        .ok_or_else(|| Error::MissingTensor(name.into()))?;
    if found != shape || data.len() != shape.iter().product::<usize>() {
        return Err(Error::ShapeMismatch {
            name: name.into(),
            expected: shape.to_vec(),
            found,
        });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("tensor `{name}`")));
    }
    Ok(data)
}
