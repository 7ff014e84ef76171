//! Allocation-only building blocks for reading predictions out of the
//! intermediate layers of a GPT-2-class decoder.
//!
//! - [`model`]: forward pass exposing the residual stream after every block
//! - [`lens`]: decode any layer through the final layer norm and unembedding
//! - [`metrics`]: max probability, cross-entropy, forward KL per layer
//! - [`refinement`]: first-correct and stabilization layers, t-intervals
//! - [`probe`]: linear probes on hidden states
//! - [`qa`]: multi-document QA prompts and answer scoring
//!
//! File formats, tokenization, parallel sweeps and the CLI live in the
//! `logit-lens` crate.

#![no_std]

extern crate alloc;

pub mod config;
pub mod error;
pub mod lens;
pub mod math;
pub mod metrics;
pub mod model;
pub mod probe;
pub mod qa;
pub mod refinement;
pub mod stats;
pub mod synthetic;

pub use config::ModelConfig;
pub use error::{Error, Result};
pub use lens::{lens_distribution, lens_logits, top_k, LensDistribution};
pub use metrics::{cross_entropy, forward_kl, layer_sweep, max_probability, LayerTraceRecord};
pub use model::{HiddenStateTrace, Model, ResidualStream, TensorSource, TokenSequence};
pub use probe::{train_probe, ProbeConfig, ProbeDataset, ProbeModel};
pub use qa::{build_prompt, evaluate_answer, Document, PromptTemplate, QAInstance, SweepConfig};
pub use refinement::{aggregate, refinement_profile, AggregateStat, RefinementProfile};
