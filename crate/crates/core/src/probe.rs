//! Linear probes: multinomial logistic regression on hidden states, trained by
//! full-batch gradient descent with an L2 penalty.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math;

/// Labelled hidden states from one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDataset {
    features: Vec<f32>,
    labels: Vec<usize>,
    dim: usize,
    /// Class identities (for answer probes, candidate token ids). Labels index
    /// into this list.
    pub label_set: Vec<u32>,
    pub layer: usize,
}

impl ProbeDataset {
    /// `features` holds `labels.len()` rows of length `dim`.
    pub fn new(
        features: Vec<f32>,
        labels: Vec<usize>,
        dim: usize,
        label_set: Vec<u32>,
        layer: usize,
    ) -> Result<Self> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::ShapeMismatch {
                name: "probe features".into(),
                expected: vec![labels.len(), dim],
                found: vec![features.len()],
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("probe features".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= label_set.len()) {
            return Err(Error::Index {
                what: "label",
                index: bad,
                len: label_set.len(),
            });
        }
        let counts = class_counts(&labels, label_set.len());
        if label_set.len() < 2 || counts.iter().filter(|&&c| c > 0).count() < 2 {
            return Err(Error::DegenerateLabels(format!(
                "need at least two populated classes, have {}",
                counts.iter().filter(|&&c| c > 0).count()
            )));
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidInput(format!("class {empty} has no examples")));
        }
        Ok(Self {
            features,
            labels,
            dim,
            label_set,
            layer,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.label_set.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

fn class_counts(labels: &[usize], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub epochs: usize,
    /// Fraction of each class held out for evaluation.
    pub test_fraction: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            l2: 1e-3,
            epochs: 500,
            test_fraction: 0.2,
        }
    }
}

/// A trained probe. Inputs are standardized with the training split's
/// per-feature mean and standard deviation before the affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    /// `n_classes x dim`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub n_classes: usize,
    pub dim: usize,
    pub config: ProbeConfig,
    pub seed: u64,
}

impl ProbeModel {
    pub fn logits(&self, x: &[f32]) -> Vec<f64> {
        let z: Vec<f64> = x
            .iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_scale)
            .map(|((&v, &m), &s)| (f64::from(v) - m) / s)
            .collect();
        (0..self.n_classes)
            .map(|c| {
                let w = &self.weights[c * self.dim..(c + 1) * self.dim];
                self.bias[c] + w.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    /// Predicted class index, lowest on ties.
    pub fn predict(&self, x: &[f32]) -> usize {
        let logits = self.logits(x);
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate().skip(1) {
            if v > logits[best] {
                best = i;
            }
        }
        best
    }
}

/// Stratified split into (train, test) row indices.
pub fn stratified_split(
    labels: &[usize],
    n_classes: usize,
    test_fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_test = if n < 2 {
            0
        } else {
            (libm::round(test_fraction * n as f64) as usize).min(n - 1)
        };
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Trains on a stratified split and returns the probe with its held-out
/// accuracy.
pub fn train_probe(
    data: &ProbeDataset,
    split_seed: u64,
    config: &ProbeConfig,
) -> Result<(ProbeModel, f64)> {
    if data.len() < 10 {
        return Err(Error::InvalidInput(format!(
            "probe training needs at least 10 examples, got {}",
            data.len()
        )));
    }
    let (train, test) =
        stratified_split(data.labels(), data.n_classes(), config.test_fraction, split_seed);
    let train_classes = class_counts(
        &train.iter().map(|&i| data.labels[i]).collect::<Vec<_>>(),
        data.n_classes(),
    )
    .iter()
    .filter(|&&c| c > 0)
    .count();
    if train_classes < 2 {
        return Err(Error::DegenerateLabels(
            "training split holds a single class".into(),
        ));
    }
    if test.is_empty() {
        return Err(Error::InvalidInput("held-out split is empty".into()));
    }
    let model = fit(data, &train, config, split_seed);
    let correct = test
        .iter()
        .filter(|&&i| model.predict(data.row(i)) == data.labels[i])
        .count();
    Ok((model, correct as f64 / test.len() as f64))
}

fn fit(data: &ProbeDataset, rows: &[usize], config: &ProbeConfig, seed: u64) -> ProbeModel {
    let d = data.dim();
    let c = data.n_classes();
    let n = rows.len() as f64;

    let mut mean = vec![0.0f64; d];
    for &i in rows {
        for (m, &v) in mean.iter_mut().zip(data.row(i)) {
            *m += f64::from(v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut scale = vec![0.0f64; d];
    for &i in rows {
        for ((s, &v), &m) in scale.iter_mut().zip(data.row(i)).zip(&mean) {
            *s += (f64::from(v) - m) * (f64::from(v) - m);
        }
    }
    scale.iter_mut().for_each(|s| {
        let sd = libm::sqrt(*s / n);
        *s = if sd > 1e-12 { sd } else { 1.0 };
    });

    let x: Vec<f64> = rows
        .iter()
        .flat_map(|&i| {
            data.row(i)
                .iter()
                .zip(&mean)
                .zip(&scale)
                .map(|((&v, &m), &s)| (f64::from(v) - m) / s)
        })
        .collect();
    let y: Vec<usize> = rows.iter().map(|&i| data.labels[i]).collect();

    let mut w = vec![0.0f64; c * d];
    let mut b = vec![0.0f64; c];
    let mut probs = vec![0.0f64; c];
    let mut grad_w = vec![0.0f64; c * d];
    let mut grad_b = vec![0.0f64; c];
    for _ in 0..config.epochs {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        grad_b.iter_mut().for_each(|g| *g = 0.0);
        for (xi, &yi) in x.chunks_exact(d).zip(&y) {
            for (k, p) in probs.iter_mut().enumerate() {
                let wk = &w[k * d..(k + 1) * d];
                *p = b[k] + wk.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
            }
            let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for p in probs.iter_mut() {
                *p = libm::exp(*p - max);
                sum += *p;
            }
            for (k, p) in probs.iter().enumerate() {
                let err = p / sum - if k == yi { 1.0 } else { 0.0 };
                grad_b[k] += err;
                for (g, &xv) in grad_w[k * d..(k + 1) * d].iter_mut().zip(xi) {
                    *g += err * xv;
                }
            }
        }
        for (wv, g) in w.iter_mut().zip(&grad_w) {
            *wv -= config.learning_rate * (g / n + config.l2 * *wv);
        }
        for (bv, g) in b.iter_mut().zip(&grad_b) {
            *bv -= config.learning_rate * g / n;
        }
    }
    ProbeModel {
        weights: w,
        bias: b,
        feature_mean: mean,
        feature_scale: scale,
        n_classes: c,
        dim: d,
        config: *config,
        seed,
    }
}

/// Fraction of rows whose restricted argmax over `candidates` equals the
/// label. `scores` holds one row of length `candidates.len()` per label.
pub fn restricted_accuracy(scores: &[Vec<f32>], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(s, &l)| math::argmax(s) == l)
        .count();
    hits as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn clusters(n_per_class: usize, dim: usize, separation: f32, seed: u64) -> ProbeDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..2 * n_per_class {
            let class = i % 2;
            let sign = if class == 0 { -1.0 } else { 1.0 };
            for j in 0..dim {
                let centre = if j == 0 { sign * separation } else { 0.0 };
                features.push(centre + rng.random_range(-1.0f32..1.0));
            }
            labels.push(class);
        }
        ProbeDataset::new(features, labels, dim, vec![10, 20], 3).unwrap()
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let labels: Vec<usize> = (0..50).map(|i| usize::from(i % 5 == 0)).collect();
        let (train, test) = stratified_split(&labels, 2, 0.2, 7);
        assert_eq!(train.len() + test.len(), 50);
        assert_eq!(test.iter().filter(|&&i| labels[i] == 1).count(), 2);
        assert_eq!(test.iter().filter(|&&i| labels[i] == 0).count(), 8);
        assert!(train.iter().all(|i| !test.contains(i)));
    }

    #[test]
    fn separable_clusters_are_learned() {
        let data = clusters(100, 8, 4.0, 1);
        let (model, acc) = train_probe(&data, 3, &ProbeConfig::default()).unwrap();
        assert!(acc >= 0.95, "accuracy {acc}");
        assert!(model.weights.iter().all(|w| w.is_finite()));
    }

    #[test]
    fn single_class_is_degenerate() {
        let err = ProbeDataset::new(vec![0.0; 20], vec![0; 10], 2, vec![1, 2], 0).unwrap_err();
        assert!(matches!(err, Error::DegenerateLabels(_)));
        let err = ProbeDataset::new(vec![0.0; 20], vec![0; 10], 2, vec![1], 0).unwrap_err();
        assert!(matches!(err, Error::DegenerateLabels(_)));
    }

    #[test]
    fn too_few_examples_rejected() {
        let data = ProbeDataset::new(vec![0.0; 8], vec![0, 1, 0, 1], 2, vec![1, 2], 0).unwrap();
        assert!(matches!(
            train_probe(&data, 0, &ProbeConfig::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let data = clusters(30, 4, 1.0, 2);
        let cfg = ProbeConfig {
            epochs: 50,
            ..ProbeConfig::default()
        };
        let a = train_probe(&data, 11, &cfg).unwrap();
        let b = train_probe(&data, 11, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn restricted_accuracy_counts_hits() {
        let scores = vec![vec![0.1, 0.9], vec![0.5, 0.5], vec![0.7, 0.2]];
        assert!((restricted_accuracy(&scores, &[1, 1, 0]) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(restricted_accuracy(&[], &[]), 0.0);
    }
}
