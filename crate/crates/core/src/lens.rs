//! Logit lens: decode any layer's hidden state through the final layer norm
//! and the unembedding.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::model::{Model, ResidualStream};

/// Smallest positive `f32`; probabilities that underflow are raised to it so
/// every entry stays strictly positive.
const MIN_PROB: f32 = f32::from_bits(1);

/// Next-token distribution decoded from one (layer, position).
#[derive(Debug, Clone, PartialEq)]
pub struct LensDistribution {
    pub probs: Vec<f32>,
    /// Pre-softmax values. Metrics work from these, not from `probs`.
    pub logits: Vec<f32>,
    pub layer: usize,
    pub position: usize,
    log_normalizer: f64,
}

impl LensDistribution {
    /// Natural-log probability of `token`, from the logits in f64.
    pub fn log_prob(&self, token: usize) -> f64 {
        f64::from(self.logits[token]) - self.log_normalizer
    }

    /// `ln Σ exp(logits)`.
    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    pub fn vocab_size(&self) -> usize {
        self.logits.len()
    }
}

/// `W_U · LayerNorm_L(h_layer^(position))`. At the last layer this is the same
/// call the forward pass uses for its final logits.
pub fn lens_logits(
    model: &Model,
    trace: &impl AsRef<ResidualStream>,
    layer: usize,
    position: usize,
) -> Result<Vec<f32>> {
    let states = trace.as_ref();
    if layer > model.config().n_layers {
        return Err(Error::Index {
            what: "layer",
            index: layer,
            len: model.config().n_states(),
        });
    }
    model.project(states.state(layer, position)?)
}

/// [`lens_logits`] at every layer `0..=L` for one position, sharing a single
/// pass over the unembedding.
pub fn lens_logits_by_layer(
    model: &Model,
    trace: &impl AsRef<ResidualStream>,
    position: usize,
) -> Result<Vec<Vec<f32>>> {
    let states = trace.as_ref();
    let rows = (0..states.n_states())
        .map(|l| states.state(l, position))
        .collect::<Result<Vec<_>>>()?;
    model.project_many(&rows)
}

/// Softmax with log-sum-exp stabilization.
pub fn lens_distribution(logits: Vec<f32>) -> Result<LensDistribution> {
    distribution_at(logits, 0, 0)
}

/// [`lens_distribution`] tagged with where the logits came from.
pub fn distribution_at(logits: Vec<f32>, layer: usize, position: usize) -> Result<LensDistribution> {
    if logits.is_empty() {
        return Err(Error::InvalidInput("empty logit vector".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let (_, lse) = math::log_sum_exp(&logits);
    let probs = logits
        .iter()
        .map(|&l| (libm::exp(f64::from(l) - lse) as f32).max(MIN_PROB))
        .collect();
    Ok(LensDistribution {
        probs,
        logits,
        layer,
        position,
        log_normalizer: lse,
    })
}

/// Lens distribution at (`layer`, `position`).
pub fn decode(
    model: &Model,
    trace: &impl AsRef<ResidualStream>,
    layer: usize,
    position: usize,
) -> Result<LensDistribution> {
    distribution_at(lens_logits(model, trace, layer, position)?, layer, position)
}

/// The `k` most probable tokens, highest first, lowest id first among ties.
pub fn top_k(dist: &LensDistribution, k: usize) -> Result<Vec<(u32, f32)>> {
    let v = dist.probs.len();
    if k == 0 || k > v {
        return Err(Error::Index {
            what: "k",
            index: k,
            len: v,
        });
    }
    if k == 1 {
        let i = math::argmax(&dist.logits);
        return Ok(alloc::vec![(i as u32, dist.probs[i])]);
    }
    let mut order: Vec<u32> = (0..v as u32).collect();
    let by_logit = |a: &u32, b: &u32| {
        dist.logits[*b as usize]
            .total_cmp(&dist.logits[*a as usize])
            .then(a.cmp(b))
    };
    if k < v {
        order.select_nth_unstable_by(k - 1, by_logit);
        order.truncate(k);
    }
    order.sort_unstable_by(by_logit);
    Ok(order
        .into_iter()
        .map(|i| (i, dist.probs[i as usize]))
        .collect())
}

/// Top-1 token at `layer`, `position`.
pub fn top1(
    model: &Model,
    trace: &impl AsRef<ResidualStream>,
    layer: usize,
    position: usize,
) -> Result<u32> {
    let logits = lens_logits(model, trace, layer, position)?;
    Ok(math::argmax(&logits) as u32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn uniform_logits_give_uniform_probs() {
        let d = lens_distribution(vec![0.5; 8]).unwrap();
        for p in &d.probs {
            assert_eq!(*p, 0.125);
        }
    }

    #[test]
    fn closed_form_two_way_softmax() {
        // exp(ln1) / (exp(ln1) + exp(ln3)) = 1/4
        let d = lens_distribution(vec![0.0, libm::logf(3.0)]).unwrap();
        assert!((d.probs[0] - 0.25).abs() < 1e-7);
        assert!((d.probs[1] - 0.75).abs() < 1e-7);
    }

    #[test]
    fn shift_by_exact_constant_is_invariant() {
        let base = vec![0.25f32, -3.5, 7.0, 1.125];
        let shifted: Vec<f32> = base.iter().map(|v| v + 1000.0).collect();
        let a = lens_distribution(base).unwrap();
        let b = lens_distribution(shifted).unwrap();
        for (x, y) in a.probs.iter().zip(&b.probs) {
            assert!((f64::from(*x) - f64::from(*y)).abs() < 1e-9);
        }
    }

    #[test]
    fn non_finite_logits_rejected() {
        assert!(matches!(
            lens_distribution(vec![0.0, f32::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            lens_distribution(vec![f32::INFINITY, 0.0]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn extreme_gap_keeps_probs_positive() {
        let d = lens_distribution(vec![0.0, 500.0]).unwrap();
        assert!(d.probs[0] > 0.0);
        assert_eq!(d.probs[1], 1.0);
        assert!((d.log_prob(0) + 500.0).abs() < 1e-9);
    }

    #[test]
    fn top_k_examples() {
        let uniform = lens_distribution(vec![0.0; 5]).unwrap();
        assert_eq!(top_k(&uniform, 1).unwrap()[0].0, 0);
        assert_eq!(
            top_k(&uniform, 3).unwrap().iter().map(|t| t.0).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );

        let one_hot = lens_distribution(vec![-200.0, -200.0, -200.0, -200.0, -200.0, -200.0, -200.0, 0.0])
            .unwrap();
        let top = top_k(&one_hot, 1).unwrap();
        assert_eq!(top[0].0, 7);
        assert_eq!(top[0].1, 1.0);

        let d = lens_distribution(vec![libm::logf(0.2), libm::logf(0.5), libm::logf(0.3)]).unwrap();
        let top = top_k(&d, 2).unwrap();
        assert_eq!(top[0].0, 1);
        assert_eq!(top[1].0, 2);
        assert!((top[0].1 - 0.5).abs() < 1e-6);
        assert!((top[1].1 - 0.3).abs() < 1e-6);
    }

    #[test]
    fn top_k_range_checked() {
        let d = lens_distribution(vec![0.0; 3]).unwrap();
        assert!(matches!(top_k(&d, 0), Err(Error::Index { .. })));
        assert!(matches!(top_k(&d, 4), Err(Error::Index { .. })));
        assert_eq!(top_k(&d, 3).unwrap().len(), 3);
    }
}
