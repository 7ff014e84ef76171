//! Refinement profiles: where the lens top-1 first hits the gold token, where
//! it locks in for good, and the number of layers in between.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RefinementProfile {
    pub first_correct_layer: Option<usize>,
    pub stabilization_layer: Option<usize>,
    /// `stabilization_layer - first_correct_layer`, when both exist.
    pub depth: Option<usize>,
    pub final_correct: bool,
}

/// Smallest layer whose top-1 equals `gold`.
pub fn first_correct_layer(top1_by_layer: &[u32], gold: u32) -> Result<Option<usize>> {
    if top1_by_layer.is_empty() {
        return Err(Error::InvalidInput("empty top-1 sequence".into()));
    }
    Ok(top1_by_layer.iter().position(|&t| t == gold))
}

/// Smallest layer from which every later top-1 equals `gold`. `None` when the
/// last layer is wrong.
pub fn stabilization_layer(top1_by_layer: &[u32], gold: u32) -> Result<Option<usize>> {
    if top1_by_layer.is_empty() {
        return Err(Error::InvalidInput("empty top-1 sequence".into()));
    }
    let wrong_suffix_start = top1_by_layer.iter().rposition(|&t| t != gold);
    Ok(match wrong_suffix_start {
        None => Some(0),
        Some(i) if i + 1 < top1_by_layer.len() => Some(i + 1),
        Some(_) => None,
    })
}

pub fn refinement_profile(top1_by_layer: &[u32], gold: u32) -> Result<RefinementProfile> {
    let first = first_correct_layer(top1_by_layer, gold)?;
    let stable = stabilization_layer(top1_by_layer, gold)?;
    let depth = match (first, stable) {
        (Some(f), Some(s)) => Some(s - f),
        _ => None,
    };
    Ok(RefinementProfile {
        first_correct_layer: first,
        stabilization_layer: stable,
        depth,
        final_correct: stable.is_some(),
    })
}

/// Mean with a two-sided Student-t confidence interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateStat {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    pub n_missing: usize,
}

/// `mean ± t_{n-1, (1+confidence)/2} · s / √n`. A single value yields a
/// zero-width interval.
pub fn aggregate(values: &[f64], confidence: f64) -> Result<AggregateStat> {
    if values.is_empty() {
        return Err(Error::InvalidInput("cannot aggregate an empty sample".into()));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidInput(alloc::format!(
            "confidence must lie in (0, 1), got {confidence}"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("aggregate input".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok(AggregateStat {
            mean,
            ci_low: mean,
            ci_high: mean,
            n,
            n_missing: 0,
        });
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let t = stats::student_t_quantile(0.5 + confidence / 2.0, (n - 1) as f64);
    let half = t * libm::sqrt(var / n as f64);
    Ok(AggregateStat {
        mean,
        ci_low: (mean - half).min(mean),
        ci_high: (mean + half).max(mean),
        n,
        n_missing: 0,
    })
}

/// [`aggregate`] over the present values; absent ones are counted in
/// `n_missing`. `Ok(None)` when nothing is present.
pub fn aggregate_present(
    values: &[Option<f64>],
    confidence: f64,
) -> Result<(Option<AggregateStat>, usize)> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    let missing = values.len() - present.len();
    if present.is_empty() {
        return Ok((None, missing));
    }
    let mut stat = aggregate(&present, confidence)?;
    stat.n_missing = missing;
    Ok((Some(stat), missing))
}
