//! Stable elementwise and row-wise primitives.

use ndarray::{Array1, ArrayView1, ArrayViewMut1};

use crate::error::{Error, Result};

/// Numerically stable softplus, `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln sigma(x) = -softplus(-x)`; stable for large |x|.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// Exact Gaussian-CDF GELU, `x * Phi(x)` (no tanh approximation).
pub fn gelu(x: f64) -> f64 {
    x * phi(x)
}

/// d/dx gelu(x) = Phi(x) + x * N(x; 0, 1).
pub fn gelu_prime(x: f64) -> f64 {
    phi(x) + x * (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[inline]
fn phi(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

/// Log-sum-exp over the finite entries of `xs`. Returns -inf if all entries
/// are -inf.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + sum.ln()
}

/// Masked log-softmax: entries where `mask` is true are excluded from the
/// normalization and come back as -inf. Stable for logits up to +-1e4.
pub fn log_softmax_masked(logits: ArrayView1<'_, f64>, mask: Option<&[bool]>) -> Result<Array1<f64>> {
    let mut out = logits.to_owned();
    log_softmax_masked_into(out.view_mut(), mask)?;
    Ok(out)
}

/// In-place variant of [`log_softmax_masked`] for hot loops.
pub fn log_softmax_masked_into(mut row: ArrayViewMut1<'_, f64>, mask: Option<&[bool]>) -> Result<()> {
    if let Some(mask) = mask {
        debug_assert_eq!(mask.len(), row.len());
        for (x, &m) in row.iter_mut().zip(mask) {
            if m {
                *x = f64::NEG_INFINITY;
            }
        }
    }
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::data("log_softmax: all entries masked"));
    }
    let mut sum = 0.0;
    for x in row.iter() {
        sum += (*x - max).exp();
    }
    let log_z = max + sum.ln();
    for x in row.iter_mut() {
        *x -= log_z; // -inf stays -inf
    }
    Ok(())
}

/// Standard interleaved sinusoidal position embedding with wavelength base
/// 10,000: even slots `sin(pos / 10000^(2i/D))`, odd slots the matching cos.
pub fn sinusoidal_embedding(position: usize, dim: usize) -> Result<Array1<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::config(format!("sinusoidal embedding needs even dim, got {dim}")));
    }
    let mut out = Array1::zeros(dim);
    for i in 0..dim / 2 {
        let rate = (-(2.0 * i as f64 / dim as f64) * 10_000f64.ln()).exp();
        let angle = position as f64 * rate;
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
    Ok(out)
}

/// Row-wise layer normalization over the last axis with learned gain/bias,
/// `eps = 1e-5` in the denominator. Forward caches nothing; the caller keeps
/// `(normalized, rstd)` when it needs the backward pass.
pub struct LayerNorm1d;

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm1d {
    /// Normalize `x` in place and return `rstd`; `x` becomes x-hat (zero
    /// mean, unit variance before affine). Gain/bias applied by the caller.
    pub fn normalize(mut x: ArrayViewMut1<'_, f64>) -> f64 {
        let n = x.len() as f64;
        let mean = x.sum() / n;
        let mut var = 0.0;
        for v in x.iter() {
            let d = *v - mean;
            var += d * d;
        }
        var /= n;
        let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for v in x.iter_mut() {
            *v = (*v - mean) * rstd;
        }
        rstd
    }

    /// Full forward: `gain * x_hat + bias`.
    pub fn forward(x: ArrayView1<'_, f64>, gain: ArrayView1<'_, f64>, bias: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut out = x.to_owned();
        Self::normalize(out.view_mut());
        for ((o, &g), &b) in out.iter_mut().zip(gain).zip(bias) {
            *o = *o * g + b;
        }
        out
    }

    /// Backward through one row given the cached normalized row and rstd.
    /// `d_out` is the upstream gradient; returns d_x and accumulates
    /// d_gain/d_bias.
    pub fn backward(
        d_out: ArrayView1<'_, f64>,
        x_hat: ArrayView1<'_, f64>,
        rstd: f64,
        gain: ArrayView1<'_, f64>,
        mut d_gain: ArrayViewMut1<'_, f64>,
        mut d_bias: ArrayViewMut1<'_, f64>,
        mut d_x: ArrayViewMut1<'_, f64>,
    ) {
        let n = x_hat.len() as f64;
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for i in 0..x_hat.len() {
            let dy = d_out[i];
            d_gain[i] += dy * x_hat[i];
            d_bias[i] += dy;
            let dxh = dy * gain[i];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * x_hat[i];
        }
        mean_dxhat /= n;
        mean_dxhat_xhat /= n;
        for i in 0..x_hat.len() {
            let dxh = d_out[i] * gain[i];
            d_x[i] += rstd * (dxh - mean_dxhat - x_hat[i] * mean_dxhat_xhat);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn log_softmax_uniform_and_symmetry() {
        let out = log_softmax_masked(array![0.0, 0.0, 0.0].view(), None).unwrap();
        for &v in out.iter() {
            assert_abs_diff_eq!(v, (1.0f64 / 3.0).ln(), epsilon = 1e-12);
        }
        let out = log_softmax_masked(array![5.0, 5.0, 5.0].view(), Some(&[true, false, false])).unwrap();
        assert_eq!(out[0], f64::NEG_INFINITY);
        assert_abs_diff_eq!(out[1], 0.5f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(out[2], 0.5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn log_softmax_extreme_logits_stable() {
        let out = log_softmax_masked(array![1000.0, 0.0].view(), None).unwrap();
        assert!(out[0].exp() > 1.0 - 1e-12);
        assert!(out[1].exp() < 1e-300);
        assert!(out.iter().all(|v| v.is_finite() || *v == f64::NEG_INFINITY || v.exp() == 0.0));
        let big = log_softmax_masked(array![1e4, -1e4, 0.0].view(), None).unwrap();
        assert!(big.iter().all(|v| !v.is_nan()));
    }

    #[test]
    fn log_softmax_all_masked_errors() {
        assert!(log_softmax_masked(array![1.0, 2.0].view(), Some(&[true, true])).is_err());
    }

    #[test]
    fn gelu_limits() {
        assert_eq!(gelu(0.0), 0.0);
        assert_abs_diff_eq!(gelu(10.0), 10.0, epsilon = 1e-6);
        assert_abs_diff_eq!(gelu(-10.0), 0.0, epsilon = 1e-6);
        // Derivative against central differences.
        for &x in &[-2.5, -0.3, 0.0, 0.7, 3.1] {
            let h = 1e-6;
            let num = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert_abs_diff_eq!(gelu_prime(x), num, epsilon = 1e-8);
        }
    }

    #[test]
    fn layer_norm_basics() {
        let gain = array![1.0, 1.0, 1.0];
        let bias = array![0.0, 0.0, 0.0];
        let out = LayerNorm1d::forward(array![1.0, 2.0, 3.0].view(), gain.view(), bias.view());
        assert_abs_diff_eq!(out.sum(), 0.0, epsilon = 1e-12);
        let var = out.iter().map(|v| v * v).sum::<f64>() / 3.0;
        assert_abs_diff_eq!(var, 1.0, epsilon = 1e-4); // eps in denominator

        // Constant vector: epsilon keeps it finite, output is the bias.
        let out = LayerNorm1d::forward(array![4.0, 4.0, 4.0].view(), gain.view(), array![1.0, 2.0, 3.0].view());
        assert_abs_diff_eq!(out[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[2], 3.0, epsilon = 1e-12);

        // Zero gain: output equals bias.
        let out = LayerNorm1d::forward(
            array![1.0, 5.0, -2.0].view(),
            array![0.0, 0.0, 0.0].view(),
            array![7.0, 7.0, 7.0].view(),
        );
        assert!(out.iter().all(|&v| v == 7.0));
    }

    #[test]
    fn sinusoidal_properties() {
        let z = sinusoidal_embedding(0, 8).unwrap();
        for i in 0..4 {
            assert_eq!(z[2 * i], 0.0);
            assert_eq!(z[2 * i + 1], 1.0);
        }
        let a = sinusoidal_embedding(1, 8).unwrap();
        assert_ne!(a, z);
        for &v in a.iter() {
            assert!((-1.0..=1.0).contains(&v));
        }
        assert!(sinusoidal_embedding(3, 7).is_err());
    }
}
