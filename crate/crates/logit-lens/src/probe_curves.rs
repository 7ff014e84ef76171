//! Per-layer probe accuracy against logit-lens accuracy.
//!
//! Each instance contributes the residual stream at the last prompt position
//! of every layer, labelled with the index of its gold first token in a
//! closed candidate set (the sorted distinct gold tokens of the dataset).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use logit_lens_core::lens::lens_logits;
use logit_lens_core::math::argmax;
use logit_lens_core::probe::{restricted_accuracy, stratified_split};
use logit_lens_core::qa::{build_prompt, derive_seed};
use logit_lens_core::{train_probe, Model, ProbeConfig, ProbeDataset, QAInstance, ResidualStream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_tensors, serialize_tensors};
use crate::error::{Error, Result};
use crate::sweep::{gold_first_token, SweepContext};

pub const STATES_SCHEMA: &str = "logit-lens/probe-states-v1";

/// Instance id, gold token and per-layer last-position states.
type Collected = (usize, u32, Vec<Vec<f32>>);

/// Last-position hidden states of every layer for a set of instances.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeStates {
    pub d_model: usize,
    /// One `[n, d]` row-major matrix per layer `0..=L`.
    pub layers: Vec<Vec<f32>>,
    /// Class index into `candidates` per row.
    pub labels: Vec<usize>,
    /// Candidate token ids, ascending.
    pub candidates: Vec<u32>,
    pub instance_ids: Vec<usize>,
}

impl ProbeStates {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_states(&self) -> usize {
        self.layers.len()
    }

    fn row(&self, layer: usize, i: usize) -> &[f32] {
        &self.layers[layer][i * self.d_model..(i + 1) * self.d_model]
    }
}

/// How probe prompts are built: `k` documents, gold at `gold_position`,
/// distractors drawn with `derive_seed(seed, 0, id)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbePrompting {
    pub k_documents: usize,
    pub gold_position: usize,
    pub seed: u64,
}

/// Runs every instance once and keeps its last-position states. Instances
/// whose prompt cannot be built or does not fit the context are skipped with
/// a warning.
pub fn collect_states(
    ctx: SweepContext<'_>,
    instances: &[QAInstance],
    prompting: ProbePrompting,
    workers: Option<usize>,
) -> Result<ProbeStates> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    let rows: Vec<Option<Collected>> = pool.install(|| {
        instances
            .par_iter()
            .map(|inst| collect_one(ctx, inst, prompting))
            .collect::<Result<_>>()
    })?;

    let kept: Vec<Collected> = rows.into_iter().flatten().collect();
    let mut candidates: Vec<u32> = kept.iter().map(|(_, g, _)| *g).collect();
    candidates.sort_unstable();
    candidates.dedup();
    let class: HashMap<u32, usize> = candidates.iter().enumerate().map(|(i, &t)| (t, i)).collect();

    let n_states = ctx.model.config().n_states();
    let mut layers = vec![Vec::new(); n_states];
    let mut labels = Vec::with_capacity(kept.len());
    let mut instance_ids = Vec::with_capacity(kept.len());
    for (id, gold, states) in kept {
        for (dst, src) in layers.iter_mut().zip(states) {
            dst.extend(src);
        }
        labels.push(class[&gold]);
        instance_ids.push(id);
    }
    Ok(ProbeStates {
        d_model: ctx.model.config().d_model,
        layers,
        labels,
        candidates,
        instance_ids,
    })
}

fn collect_one(
    ctx: SweepContext<'_>,
    inst: &QAInstance,
    prompting: ProbePrompting,
) -> Result<Option<Collected>> {
    let seed = derive_seed(prompting.seed, 0, inst.id as u64);
    let prompt = match build_prompt(inst, prompting.k_documents, prompting.gold_position, seed, ctx.template) {
        Ok(p) => p,
        Err(e) => {
            log::warn!("skipped instance {}: {e}", inst.id);
            return Ok(None);
        }
    };
    let gold = match gold_first_token(ctx.tokenizer, inst, &prompt.text) {
        Ok(g) => g,
        Err(e) => {
            log::warn!("skipped instance {}: {e}", inst.id);
            return Ok(None);
        }
    };
    let tokens = ctx.tokenizer.encode(&prompt.text)?;
    if tokens.len() > ctx.model.config().max_context {
        log::warn!("skipped instance {}: prompt of {} tokens is too long", inst.id, tokens.len());
        return Ok(None);
    }
    let stream = ctx.model.residual_stream(&tokens)?;
    let last = tokens.len() - 1;
    let states = (0..stream.n_states())
        .map(|l| stream.state(l, last).map(<[f32]>::to_vec))
        .collect::<logit_lens_core::Result<Vec<_>>>()?;
    Ok(Some((inst.id, gold, states)))
}

/// Accuracies at one layer. All fractions lie in `[0, 1]` and are computed
/// over the same instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCurvePoint {
    pub layer: usize,
    /// Held-out accuracy of the probe.
    pub probe_accuracy: f64,
    /// Lens top-1 restricted to the candidates, on the probe's held-out rows.
    pub lens_heldout_accuracy: f64,
    /// Lens top-1 restricted to the candidates, on every row.
    pub lens_restricted_accuracy: f64,
    /// Lens top-1 over the full vocabulary, on every row.
    pub lens_unrestricted_accuracy: f64,
    pub n_examples: usize,
    pub n_heldout: usize,
}

/// Probe-versus-lens accuracy for each requested layer, in request order.
pub fn layer_accuracy_curves(
    model: &Model,
    states: &ProbeStates,
    layers: &[usize],
    split_seed: u64,
    config: &ProbeConfig,
) -> Result<Vec<LayerCurvePoint>> {
    if let Some(&bad) = layers.iter().find(|&&l| l >= states.n_states()) {
        return Err(logit_lens_core::Error::Index {
            what: "layer",
            index: bad,
            len: states.n_states(),
        }
        .into());
    }
    if layers.is_empty() {
        return Ok(Vec::new());
    }
    let (_, test) = stratified_split(
        &states.labels,
        states.candidates.len(),
        config.test_fraction,
        split_seed,
    );
    layers
        .par_iter()
        .map(|&layer| curve_point(model, states, layer, &test, split_seed, config))
        .collect()
}

fn curve_point(
    model: &Model,
    states: &ProbeStates,
    layer: usize,
    test: &[usize],
    split_seed: u64,
    config: &ProbeConfig,
) -> Result<LayerCurvePoint> {
    let n = states.len();
    let data = ProbeDataset::new(
        states.layers[layer].clone(),
        states.labels.clone(),
        states.d_model,
        states.candidates.clone(),
        layer,
    )?;
    let (_, probe_accuracy) = train_probe(&data, split_seed, config)?;

    // The lens of a single state: wrap it as a one-layer, one-position stream.
    let mut restricted = Vec::with_capacity(n);
    let mut unrestricted_hits = 0;
    for i in 0..n {
        let row = states.row(layer, i).to_vec();
        let stream = ResidualStream::from_parts(row, 1, 1, states.d_model)?;
        let logits = lens_logits(model, &stream, 0, 0)?;
        restricted.push(states.candidates.iter().map(|&t| logits[t as usize]).collect::<Vec<f32>>());
        if argmax(&logits) as u32 == states.candidates[states.labels[i]] {
            unrestricted_hits += 1;
        }
    }
    let held_scores: Vec<Vec<f32>> = test.iter().map(|&i| restricted[i].clone()).collect();
    let held_labels: Vec<usize> = test.iter().map(|&i| states.labels[i]).collect();
    Ok(LayerCurvePoint {
        layer,
        probe_accuracy,
        lens_heldout_accuracy: restricted_accuracy(&held_scores, &held_labels),
        lens_restricted_accuracy: restricted_accuracy(&restricted, &states.labels),
        lens_unrestricted_accuracy: unrestricted_hits as f64 / n as f64,
        n_examples: n,
        n_heldout: test.len(),
    })
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    schema: String,
    d_model: usize,
    n_states: usize,
    labels: Vec<usize>,
    candidates: Vec<u32>,
    instance_ids: Vec<usize>,
}

/// Writes `layer.{l}` `[n, d]` tensors to `tensors_path` and the labels to a
/// JSON sidecar at `sidecar_path`.
pub fn export_states(states: &ProbeStates, tensors_path: &Path, sidecar_path: &Path) -> Result<()> {
    let tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)> = states
        .layers
        .iter()
        .enumerate()
        .map(|(l, m)| (format!("layer.{l}"), (vec![states.len(), states.d_model], m.clone())))
        .collect();
    let bytes = serialize_tensors(&tensors, None)?;
    crate::manifest::write_atomic(tensors_path, &bytes)?;
    let sidecar = Sidecar {
        schema: STATES_SCHEMA.into(),
        d_model: states.d_model,
        n_states: states.n_states(),
        labels: states.labels.clone(),
        candidates: states.candidates.clone(),
        instance_ids: states.instance_ids.clone(),
    };
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::json("probe sidecar", e))?;
    crate::manifest::write_atomic(sidecar_path, json.as_bytes())
}

pub fn import_states(tensors_path: &Path, sidecar_path: &Path) -> Result<ProbeStates> {
    let text = fs::read_to_string(sidecar_path).map_err(|e| Error::io(sidecar_path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::json("probe sidecar", e))?;
    if sidecar.schema != STATES_SCHEMA {
        return Err(Error::InvalidInput(format!("unknown probe-states schema {}", sidecar.schema)));
    }
    let mut file = read_tensors(tensors_path)?;
    let n = sidecar.labels.len();
    let mut layers = Vec::with_capacity(sidecar.n_states);
    for l in 0..sidecar.n_states {
        let name = format!("layer.{l}");
        let (shape, data) = file
            .tensors
            .remove(&name)
            .ok_or_else(|| logit_lens_core::Error::MissingTensor(name.clone()))?;
        if shape != [n, sidecar.d_model] {
            return Err(logit_lens_core::Error::ShapeMismatch {
                name,
                expected: vec![n, sidecar.d_model],
                found: shape,
            }
            .into());
        }
        layers.push(data);
    }
    if sidecar.instance_ids.len() != n || sidecar.labels.iter().any(|&c| c >= sidecar.candidates.len()) {
        return Err(Error::InvalidInput("probe sidecar is inconsistent".into()));
    }
    Ok(ProbeStates {
        d_model: sidecar.d_model,
        layers,
        labels: sidecar.labels,
        candidates: sidecar.candidates,
        instance_ids: sidecar.instance_ids,
    })
}
