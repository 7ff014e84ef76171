use alloc::format;

use crate::error::{Error, Result};

/// Hyperparameters of a GPT-2-class decoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_context: usize,
    pub ln_epsilon: f32,
}

impl ModelConfig {
    /// The 124M-parameter GPT-2 release.
    pub const GPT2_SMALL: ModelConfig = ModelConfig {
        n_layers: 12,
        d_model: 768,
        n_heads: 12,
        vocab_size: 50257,
        max_context: 1024,
        ln_epsilon: 1e-5,
    };

    pub fn validate(&self) -> Result<()> {
        if self.n_layers < 1 {
            return Err(Error::InvalidConfig("n_layers must be at least 1".into()));
        }
        if self.n_heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < 2 {
            return Err(Error::InvalidConfig("vocab_size must be at least 2".into()));
        }
        if self.max_context < 1 {
            return Err(Error::InvalidConfig("max_context must be at least 1".into()));
        }
        if !(self.ln_epsilon > 0.0 && self.ln_epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "ln_epsilon must be positive, got {}",
                self.ln_epsilon
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Number of hidden-state rows in a trace: the embedding output plus one per block.
    pub fn n_states(&self) -> usize {
        self.n_layers + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gpt2_small_is_valid() {
        ModelConfig::GPT2_SMALL.validate().unwrap();
        assert_eq!(ModelConfig::GPT2_SMALL.n_states(), 13);
        assert_eq!(ModelConfig::GPT2_SMALL.head_dim(), 64);
    }

    #[test]
    fn rejects_bad_configs() {
        let base = ModelConfig::GPT2_SMALL;
        for bad in [
            ModelConfig { n_heads: 7, ..base },
            ModelConfig { n_layers: 0, ..base },
            ModelConfig { vocab_size: 1, ..base },
            ModelConfig { max_context: 0, ..base },
            ModelConfig { ln_epsilon: 0.0, ..base },
            ModelConfig { ln_epsilon: f32::NAN, ..base },
        ] {
            assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))), "{bad:?}");
        }
    }
}
