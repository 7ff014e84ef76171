//! Dense kernels shared by the forward pass and the lens.

use alloc::vec::Vec;

const GEMM_MIN_ROWS: usize = 8;

/// Row-major affine map `y = x W + b` with `W` stored as `d_in x d_out`
/// (the GPT-2 `Conv1D` layout).
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Applies the map to `rows` stacked input vectors.
    pub fn forward(&self, x: &[f32], rows: usize) -> Vec<f32> {
        debug_assert_eq!(x.len(), rows * self.d_in);
        let mut out = Vec::with_capacity(rows * self.d_out);
        for _ in 0..rows {
            out.extend_from_slice(&self.bias);
        }
        if rows == 0 || self.d_in == 0 || self.d_out == 0 {
            return out;
        }
        // A few rows (decoding steps) stream the weights once; packing them
        // for the blocked kernel would cost more than the product.
        if rows < GEMM_MIN_ROWS {
            for (xi, yi) in x.chunks_exact(self.d_in).zip(out.chunks_exact_mut(self.d_out)) {
                for (&xk, w) in xi.iter().zip(self.weight.chunks_exact(self.d_out)) {
                    for (y, &wkj) in yi.iter_mut().zip(w) {
                        *y += xk * wkj;
                    }
                }
            }
            return out;
        }
        // SAFETY: `x` is rows x d_in, `weight` is d_in x d_out and `out` is
        // rows x d_out, all row-major and contiguous with the strides given.
        unsafe {
            matrixmultiply::sgemm(
                rows,
                self.d_in,
                self.d_out,
                1.0,
                x.as_ptr(),
                self.d_in as isize,
                1,
                self.weight.as_ptr(),
                self.d_out as isize,
                1,
                1.0,
                out.as_mut_ptr(),
                self.d_out as isize,
                1,
            );
        }
        out
    }
}

/// Affine layer normalization parameters.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Vec<f32>,
    pub bias: Vec<f32>,
    pub epsilon: f32,
}

impl LayerNorm {
    /// Normalizes every row of `x` in place. Statistics accumulate in f64.
    pub fn forward_inplace(&self, x: &mut [f32]) {
        let d = self.gain.len();
        for row in x.chunks_exact_mut(d) {
            let (mean, var) = moments(row);
            let inv = 1.0 / libm::sqrt(var + f64::from(self.epsilon));
            for ((v, &g), &b) in row.iter_mut().zip(&self.gain).zip(&self.bias) {
                *v = ((f64::from(*v) - mean) * inv) as f32 * g + b;
            }
        }
    }

    /// Normalizes one vector entirely in f64.
    pub fn forward_f64(&self, h: &[f32]) -> Vec<f64> {
        let (mean, var) = moments(h);
        let inv = 1.0 / libm::sqrt(var + f64::from(self.epsilon));
        h.iter()
            .zip(&self.gain)
            .zip(&self.bias)
            .map(|((&v, &g), &b)| (f64::from(v) - mean) * inv * f64::from(g) + f64::from(b))
            .collect()
    }
}

/// Mean and biased variance.
fn moments(row: &[f32]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = row
        .iter()
        .map(|&v| {
            let c = f64::from(v) - mean;
            c * c
        })
        .sum::<f64>()
        / n;
    (mean, var)
}

/// GPT-2's tanh approximation of GELU.
pub fn gelu(x: f32) -> f32 {
    const SQRT_2_OVER_PI: f32 = 0.797_884_6;
    // 1 + tanh(u) = 2 - 2 / (exp(2u) + 1); exp saturates cleanly at both ends.
    let u = SQRT_2_OVER_PI * (x + 0.044_715 * x * x * x);
    x * (1.0 - 1.0 / (libm::expf(2.0 * u) + 1.0))
}

/// In-place softmax with max subtraction.
pub fn softmax_inplace(x: &mut [f32]) {
    let max = x.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in x.iter_mut() {
        *v = libm::expf(*v - max);
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// `ln Σ exp(x)` accumulated in f64. Returns `(max, lse)`.
pub fn log_sum_exp(logits: &[f32]) -> (f64, f64) {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let sum: f64 = logits
        .iter()
        .map(|&l| libm::exp(f64::from(l) - max))
        .sum();
    (max, max + libm::log(sum))
}

/// `Σ w_i x_i` in f64 with eight interleaved partial sums, so the loop
/// vectorizes while the summation order stays fixed.
pub fn dot_f64(w: &[f32], x: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let mut wc = w.chunks_exact(8);
    let mut xc = x.chunks_exact(8);
    for (a, b) in (&mut wc).zip(&mut xc) {
        for i in 0..8 {
            acc[i] += f64::from(a[i]) * b[i];
        }
    }
    let tail: f64 = wc
        .remainder()
        .iter()
        .zip(xc.remainder())
        .map(|(&a, &b)| f64::from(a) * b)
        .sum();
    ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7])) + tail
}

/// f32 dot product with the same fixed interleaving as [`dot_f64`].
pub fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let mut ac = a.chunks_exact(8);
    let mut bc = b.chunks_exact(8);
    for (x, y) in (&mut ac).zip(&mut bc) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f32 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7])) + tail
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn linear_matches_naive() {
        let lin = Linear {
            weight: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            bias: vec![0.5, -0.5, 1.0],
            d_in: 2,
            d_out: 3,
        };
        let y = lin.forward(&[1.0, -1.0, 2.0, 0.5], 2);
        assert_eq!(y, vec![-2.5, -3.5, -2.0, 4.5, 6.0, 10.0]);
    }

    #[test]
    fn layer_norm_of_constant_row_is_bias() {
        let ln = LayerNorm {
            gain: vec![2.0; 4],
            bias: vec![0.1, 0.2, 0.3, 0.4],
            epsilon: 1e-5,
        };
        let mut x = vec![3.0f32; 4];
        ln.forward_inplace(&mut x);
        assert_eq!(x, vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(ln.forward_f64(&[0.0; 4]), vec![0.1f32 as f64, 0.2f32 as f64, 0.3f32 as f64, 0.4f32 as f64]);
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        // 0.5 * 1 * (1 + tanh(sqrt(2/pi) * 1.044715)) = 0.841192
        assert!((gelu(1.0) - 0.841_192).abs() < 1e-5);
        assert!(gelu(-10.0).abs() < 1e-6);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0; 5]), 0);
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut x = vec![1000.0, 1001.0, 999.0];
        softmax_inplace(&mut x);
        assert!((x.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!(x[1] > x[0] && x[0] > x[2]);
    }
}
