//! Dense kernels with hand-written derivatives: layer normalization, GELU and
//! softmax cross-entropy.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// A value together with the gradient of some scalar objective with respect
/// to it.
#[derive(Debug, Clone, PartialEq)]
pub struct GradPair<T: Scalar = f64> {
    pub value: Matrix<T>,
    pub grad: Matrix<T>,
}

impl<T: Scalar> GradPair<T> {
    pub fn new(value: Matrix<T>) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Self { value, grad }
    }

    pub fn with_grad(value: Matrix<T>, grad: Matrix<T>) -> Result<Self> {
        if !value.same_shape(&grad) {
            return Err(Error::dims("GradPair", value.shape(), grad.shape()));
        }
        Ok(Self { value, grad })
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Normalizes a single row: `gain * (x - mean) / sqrt(var + eps) + bias`,
/// population variance.
pub fn layer_norm<T: Scalar>(x: &[T], gain: &[T], bias: &[T], eps: T) -> Result<Vec<T>> {
    let n = x.len();
    if n == 0 || gain.len() != n || bias.len() != n {
        return Err(Error::Dimension {
            op: "layer_norm",
            lhs: format!("x has {n} channels"),
            rhs: format!("gain {} / bias {}", gain.len(), bias.len()),
        });
    }
    let mut out = vec![T::zero(); n];
    normalize_row(x, gain, bias, eps, &mut out);
    Ok(out)
}

/// Writes `xhat` into `out` then applies the affine map; returns `1/std`.
fn normalize_row<T: Scalar>(x: &[T], gain: &[T], bias: &[T], eps: T, out: &mut [T]) -> T {
    let n = T::of_usize(x.len());
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x
        .iter()
        .map(|&v| {
            let d = v - mean;
            d * d
        })
        .sum::<T>()
        / n;
    let inv_std = T::one() / (var + eps).sqrt();
    for (((o, &v), &g), &b) in out.iter_mut().zip(x).zip(gain).zip(bias) {
        *o = g * ((v - mean) * inv_std) + b;
    }
    inv_std
}

/// Row-wise layer normalization of a table, keeping what the backward pass
/// needs.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T: Scalar> {
    /// Normalized input before the affine map.
    pub xhat: Matrix<T>,
    pub inv_std: Vec<T>,
}

pub fn layer_norm_rows<T: Scalar>(
    x: &Matrix<T>,
    gain: &[T],
    bias: &[T],
    eps: T,
) -> Result<(Matrix<T>, LayerNormCache<T>)> {
    let n = x.cols();
    if gain.len() != n || bias.len() != n {
        return Err(Error::Dimension {
            op: "layer_norm_rows",
            lhs: format!("{}x{}", x.rows(), n),
            rhs: format!("gain {} / bias {}", gain.len(), bias.len()),
        });
    }
    let ones = vec![T::one(); n];
    let zeros = vec![T::zero(); n];
    let mut xhat = Matrix::zeros(x.rows(), n);
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        inv_std.push(normalize_row(x.row(r), &ones, &zeros, eps, xhat.row_mut(r)));
    }
    let mut y = xhat.clone();
    for r in 0..y.rows() {
        for ((v, &g), &b) in y.row_mut(r).iter_mut().zip(gain).zip(bias) {
            *v = g * *v + b;
        }
    }
    Ok((y, LayerNormCache { xhat, inv_std }))
}

/// Backward of [`layer_norm_rows`]. Returns `dx` and accumulates into
/// `d_gain` / `d_bias`.
pub fn layer_norm_rows_backward<T: Scalar>(
    dy: &Matrix<T>,
    gain: &[T],
    cache: &LayerNormCache<T>,
    d_gain: &mut [T],
    d_bias: &mut [T],
) -> Matrix<T> {
    let n = dy.cols();
    let nf = T::of_usize(n);
    let mut dx = Matrix::zeros(dy.rows(), n);
    let mut dxhat = vec![T::zero(); n];
    for r in 0..dy.rows() {
        let dy_row = dy.row(r);
        let xhat = cache.xhat.row(r);
        for c in 0..n {
            d_gain[c] = d_gain[c] + dy_row[c] * xhat[c];
            d_bias[c] = d_bias[c] + dy_row[c];
            dxhat[c] = dy_row[c] * gain[c];
        }
        let mean_d = dxhat.iter().copied().sum::<T>() / nf;
        let mean_dx = dxhat.iter().zip(xhat).map(|(&d, &h)| d * h).sum::<T>() / nf;
        let inv_std = cache.inv_std[r];
        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = inv_std * (dxhat[c] - mean_d - xhat[c] * mean_dx);
        }
    }
    dx
}

/// Standard normal CDF.
pub fn std_normal_cdf<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    half * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub fn std_normal_pdf<T: Scalar>(x: T) -> T {
    let inv_sqrt_2pi = T::of(0.398_942_280_401_432_7);
    inv_sqrt_2pi * (-(x * x) * T::of(0.5)).exp()
}

/// Exact GELU, `x * Φ(x)`.
pub fn gelu<T: Scalar>(x: T) -> T {
    x * std_normal_cdf(x)
}

/// `d/dx gelu(x) = Φ(x) + x φ(x)`.
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    std_normal_cdf(x) + x * std_normal_pdf(x)
}

pub fn gelu_matrix<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    x.map(gelu)
}

/// Loss `-log softmax(logits)[target]` and its gradient with respect to the
/// logits, `softmax(logits) - onehot(target)`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], target: usize) -> Result<(T, Vec<T>)> {
    if target >= logits.len() {
        return Err(Error::Index {
            index: target,
            len: logits.len(),
        });
    }
    let probs = softmax(logits);
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let log_z = logits.iter().map(|&l| (l - max).exp()).sum::<T>().ln() + max;
    let loss = log_z - logits[target];
    let mut grad = probs;
    grad[target] = grad[target] - T::one();
    Ok((loss, grad))
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z = exps.iter().copied().sum::<T>();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Maclaurin series of erf, summed until terms vanish.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term.abs() > 1e-18 {
            n += 1.0;
            term *= -x * x / n;
            sum += term / (2.0 * n + 1.0);
        }
        2.0 / std::f64::consts::PI.sqrt() * sum
    }

    fn phi_oracle(x: f64) -> f64 {
        0.5 * (1.0 + erf_series(x / 2f64.sqrt()))
    }

    #[test]
    fn layer_norm_examples() {
        let y = layer_norm(&[3.0, 3.0, 3.0], &[1.0; 3], &[0.0; 3], 1e-5).unwrap();
        assert_eq!(y, vec![0.0; 3]);

        // mean 0, var 1 -> 1/sqrt(1 + eps)
        let expected = 1.0 / (1.0f64 + 1e-5).sqrt();
        let y = layer_norm(&[1.0, -1.0], &[1.0; 2], &[0.0; 2], 1e-5).unwrap();
        assert!((y[0] - expected).abs() < 1e-15 && (y[1] + expected).abs() < 1e-15);
        assert!((y[0] - 0.999_995).abs() < 1e-6);

        let y = layer_norm(&[0.3, -7.0, 2.0], &[0.0; 3], &[1.0, 2.0, 3.0], 1e-5).unwrap();
        assert_eq!(y, vec![1.0, 2.0, 3.0]);

        assert!(layer_norm::<f64>(&[], &[], &[], 1e-5).is_err());
        assert!(layer_norm(&[1.0, 2.0], &[1.0], &[0.0, 0.0], 1e-5).is_err());
    }

    #[test]
    fn gelu_examples() {
        assert_eq!(gelu(0.0f64), 0.0);
        let expected = phi_oracle(1.0);
        assert!((gelu(1.0f64) - expected).abs() < 1e-14);
        assert!((gelu(1.0f64) - 0.841_344_746_068_542_9).abs() < 1e-14);
        assert!(gelu(-10.0f64).abs() < 1e-8);
    }

    #[test]
    fn gelu_grad_matches_oracle() {
        for &x in &[-3.0, -0.5, 0.0, 0.5, 2.0] {
            let pdf = (-x * x / 2.0f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let oracle = phi_oracle(x) + x * pdf;
            assert!((gelu_grad(x) - oracle).abs() < 1e-13, "x={x}");
        }
    }

    /// GELU has a single minimum near -0.7518; it is nonincreasing left of it
    /// and nondecreasing right of it.
    #[test]
    fn gelu_is_unimodal_on_grid() {
        let grid: Vec<f64> = (0..10_000)
            .map(|i| -6.0 + 12.0 * i as f64 / 9_999.0)
            .collect();
        let argmin = grid
            .iter()
            .enumerate()
            .min_by(|a, b| gelu(*a.1).partial_cmp(&gelu(*b.1)).unwrap())
            .unwrap()
            .0;
        assert!((grid[argmin] + 0.7518).abs() < 2e-3);
        for w in grid[argmin..].windows(2) {
            assert!(gelu(w[1]) >= gelu(w[0]));
        }
        for w in grid[..=argmin].windows(2) {
            assert!(gelu(w[1]) <= gelu(w[0]));
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let (loss, _) = softmax_cross_entropy(&[0.7, 0.7, 0.7], 1).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-15);

        let (loss, grad) = softmax_cross_entropy(&[1000.0f64, 0.0], 0).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.iter().all(|g| g.abs() < 1e-12));

        // -log(e^3 / (e + e^2 + e^3)) evaluated by hand
        let oracle = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln() - 3.0;
        let (loss, _) = softmax_cross_entropy(&[1.0, 2.0, 3.0], 2).unwrap();
        assert!((loss - oracle).abs() < 1e-15);
        assert!((loss - 0.407_605_964).abs() < 1e-8);

        assert!(matches!(
            softmax_cross_entropy(&[1.0, 2.0], 2),
            Err(Error::Index { index: 2, len: 2 })
        ));
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        let x = Matrix::from_rows(&[vec![0.3, -1.2, 2.0, 0.1], vec![1.0, 1.5, -0.5, 0.0]]).unwrap();
        let gain = [1.1, 0.9, -0.4, 2.0];
        let bias = [0.1, 0.0, 0.3, -0.2];
        let w =
            Matrix::from_rows(&[vec![0.5, -1.0, 0.25, 2.0], vec![-0.3, 0.7, 1.1, 0.4]]).unwrap();
        let loss = |x: &Matrix| {
            let (y, _) = layer_norm_rows(x, &gain, &bias, 1e-5).unwrap();
            y.data()
                .iter()
                .zip(w.data())
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let (_, cache) = layer_norm_rows(&x, &gain, &bias, 1e-5).unwrap();
        let mut dg = [0.0; 4];
        let mut db = [0.0; 4];
        let dx = layer_norm_rows_backward(&w, &gain, &cache, &mut dg, &mut db);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            let numeric = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!((numeric - dx.data()[i]).abs() < 1e-7, "coordinate {i}");
        }
    }

    proptest! {
        #[test]
        fn normalized_rows_have_zero_mean_and_shrunk_variance(
            xs in proptest::collection::vec(-50.0f64..50.0, 2..40)
        ) {
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assume!(var > 1e-3);
            let y = layer_norm(&xs, &vec![1.0; xs.len()], &vec![0.0; xs.len()], 1e-5).unwrap();
            let y_mean = y.iter().sum::<f64>() / n;
            let y_var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n;
            prop_assert!(y_mean.abs() < 1e-10);
            prop_assert!((y_var - 1.0 / (1.0 + 1e-5 / var)).abs() < 1e-6);
        }

        #[test]
        fn cross_entropy_grad_sums_to_zero(
            logits in proptest::collection::vec(-30.0f64..30.0, 1..12),
            t in 0usize..12,
        ) {
            let target = t % logits.len();
            let (loss, grad) = softmax_cross_entropy(&logits, target).unwrap();
            prop_assert!(loss >= 0.0);
            prop_assert!(grad.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
