//! Seeded random GPT-2-shaped weights, for tests and benchmarks that cannot
//! ship a trained checkpoint.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::Result;
use crate::model::{expected_tensors, Model};

/// Tensors for `config` drawn uniformly from `[-scale, scale]`. Layer-norm
/// gains are centred on one.
pub fn random_tensors(
    config: &ModelConfig,
    seed: u64,
    scale: f32,
) -> BTreeMap<String, (Vec<usize>, Vec<f32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    expected_tensors(config)
        .into_iter()
        .map(|(name, shape)| {
            let n: usize = shape.iter().product();
            let is_gain = name.contains("ln_") && name.ends_with(".weight");
            let data = (0..n)
                .map(|_| {
                    let u = rng.random_range(-scale..=scale);
                    if is_gain {
                        1.0 + u
                    } else {
                        u
                    }
                })
                .collect();
            (name, (shape, data))
        })
        .collect()
}

/// A randomly initialised model with weights in `[-0.2, 0.2]`, wide enough
/// that intermediate layers disagree with the output layer.
pub fn random_model(config: ModelConfig, seed: u64) -> Result<Model> {
    Model::from_tensors(config, &random_tensors(&config, seed, 0.2))
}
