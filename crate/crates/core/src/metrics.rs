//! Per-layer quantities: maximum probability, cross-entropy against the true
//! next token, and forward KL against the output layer. All in nats, all
//! accumulated in f64 from log-softmax values.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::lens::{self, LensDistribution};
use crate::math;
use crate::model::{Model, ResidualStream};

/// One cell of a layer sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTraceRecord {
    pub layer: usize,
    pub position: usize,
    pub top1_token: u32,
    pub max_prob: f64,
    /// Absent when the position has no known next token.
    pub cross_entropy: Option<f64>,
    pub forward_kl: f64,
}

/// Probability of the top-1 token.
pub fn max_probability(dist: &LensDistribution) -> f64 {
    f64::from(dist.probs[math::argmax(&dist.logits)])
}

/// `-ln p(gold)`.
pub fn cross_entropy(dist: &LensDistribution, gold: u32) -> Result<f64> {
    let v = dist.vocab_size();
    if gold as usize >= v {
        return Err(Error::Index {
            what: "gold token",
            index: gold as usize,
            len: v,
        });
    }
    Ok((-dist.log_prob(gold as usize)).max(0.0))
}

/// `D_KL(final ‖ intermediate) = Σ_v p_final(v) (ln p_final(v) − ln p_inter(v))`.
///
/// The output-layer distribution is the reference. Tiny negative results from
/// rounding are clamped to zero.
pub fn forward_kl(final_dist: &LensDistribution, intermediate: &LensDistribution) -> Result<f64> {
    if final_dist.vocab_size() != intermediate.vocab_size() {
        return Err(Error::ShapeMismatch {
            name: "distribution".into(),
            expected: vec![final_dist.vocab_size()],
            found: vec![intermediate.vocab_size()],
        });
    }
    let kl: f64 = (0..final_dist.vocab_size())
        .map(|v| {
            let lf = final_dist.log_prob(v);
            libm::exp(lf) * (lf - intermediate.log_prob(v))
        })
        .sum();
    Ok(kl.max(0.0))
}

/// One record per layer `0..=L` at `position`.
pub fn layer_sweep(
    model: &Model,
    trace: &impl AsRef<ResidualStream>,
    position: usize,
    gold: Option<u32>,
) -> Result<Vec<LayerTraceRecord>> {
    let n_layers = model.config().n_layers;
    let final_dist = lens::decode(model, trace, n_layers, position)?;
    (0..=n_layers)
        .map(|layer| {
            let dist = if layer == n_layers {
                final_dist.clone()
            } else {
                lens::decode(model, trace, layer, position)?
            };
            Ok(LayerTraceRecord {
                layer,
                position,
                top1_token: math::argmax(&dist.logits) as u32,
                max_prob: max_probability(&dist),
                cross_entropy: gold.map(|g| cross_entropy(&dist, g)).transpose()?,
                forward_kl: forward_kl(&final_dist, &dist)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lens::lens_distribution;

    fn probs(p: &[f64]) -> LensDistribution {
        lens_distribution(p.iter().map(|&x| libm::log(x) as f32).collect()).unwrap()
    }

    #[test]
    fn max_probability_examples() {
        let uniform = lens_distribution(vec![1.0; 10]).unwrap();
        assert!((max_probability(&uniform) - 0.1).abs() < 1e-7);
        let mut l = vec![-300.0f32; 4];
        l[2] = 0.0;
        assert_eq!(max_probability(&lens_distribution(l).unwrap()), 1.0);
        assert!((max_probability(&probs(&[0.25, 0.75])) - 0.75).abs() < 1e-7);
    }

    #[test]
    fn cross_entropy_examples() {
        let mut l = vec![-300.0f32; 4];
        l[1] = 0.0;
        let one_hot = lens_distribution(l).unwrap();
        assert_eq!(cross_entropy(&one_hot, 1).unwrap(), 0.0);

        let uniform = lens_distribution(vec![0.0; 50257]).unwrap();
        assert!((cross_entropy(&uniform, 123).unwrap() - libm::log(50257.0)).abs() < 1e-9);

        // -ln 0.25 = ln 4
        let d = probs(&[0.25, 0.75]);
        assert!((cross_entropy(&d, 0).unwrap() - libm::log(4.0)).abs() < 1e-6);
        assert!((cross_entropy(&d, 0).unwrap() - 1.3863).abs() < 1e-4);

        assert!(matches!(cross_entropy(&d, 2), Err(Error::Index { .. })));
    }

    #[test]
    fn forward_kl_examples() {
        let p = probs(&[0.5, 0.5]);
        let q = probs(&[0.25, 0.75]);
        assert_eq!(forward_kl(&p, &p).unwrap(), 0.0);
        // 0.5 ln 2 + 0.5 ln(2/3)
        let expected = 0.5 * libm::log(2.0) + 0.5 * libm::log(2.0 / 3.0);
        let kl = forward_kl(&p, &q).unwrap();
        assert!((kl - expected).abs() < 1e-6, "{kl} vs {expected}");
        assert!((kl - 0.1438).abs() < 1e-4);

        let r = probs(&[0.2, 0.3, 0.5]);
        assert!(matches!(forward_kl(&p, &r), Err(Error::ShapeMismatch { .. })));
    }
}
