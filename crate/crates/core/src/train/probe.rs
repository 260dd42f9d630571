//! Multinomial logistic regression used to measure how much label
//! information a frozen representation carries.

use crate::error::{Error, Result};
use crate::ops::{argmax, softmax};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOptions {
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            iterations: 500,
            learning_rate: 0.5,
            l2: 1e-3,
        }
    }
}

/// Weights over standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    mean: Vec<f64>,
    scale: Vec<f64>,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl LinearProbe {
    /// Full-batch gradient descent from zero weights; deterministic.
    pub fn fit(
        features: &[Vec<f64>],
        labels: &[usize],
        num_labels: usize,
        options: ProbeOptions,
    ) -> Result<Self> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(Error::Data(format!(
                "probe needs matching non-empty features and labels, got {} and {}",
                features.len(),
                labels.len()
            )));
        }
        let dim = features[0].len();
        if let Some(&l) = labels.iter().find(|&&l| l >= num_labels) {
            return Err(Error::Index {
                index: l,
                len: num_labels,
            });
        }
        let n = features.len() as f64;
        let mean: Vec<f64> = (0..dim)
            .map(|j| features.iter().map(|f| f[j]).sum::<f64>() / n)
            .collect();
        let scale: Vec<f64> = (0..dim)
            .map(|j| {
                let var = features
                    .iter()
                    .map(|f| (f[j] - mean[j]).powi(2))
                    .sum::<f64>()
                    / n;
                if var > 1e-24 {
                    1.0 / var.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        let mut probe = Self {
            mean,
            scale,
            weights: vec![vec![0.0; dim]; num_labels],
            bias: vec![0.0; num_labels],
        };
        let xs: Vec<Vec<f64>> = features.iter().map(|f| probe.standardize(f)).collect();
        for _ in 0..options.iterations {
            let mut gw = vec![vec![0.0; dim]; num_labels];
            let mut gb = vec![0.0; num_labels];
            for (x, &y) in xs.iter().zip(labels) {
                let mut p = softmax(&probe.logits_standardized(x));
                p[y] -= 1.0;
                for (c, &d) in p.iter().enumerate() {
                    gb[c] += d / n;
                    for (g, &v) in gw[c].iter_mut().zip(x) {
                        *g += d * v / n;
                    }
                }
            }
            for c in 0..num_labels {
                probe.bias[c] -= options.learning_rate * gb[c];
                for (w, g) in probe.weights[c].iter_mut().zip(&gw[c]) {
                    *w -= options.learning_rate * (g + options.l2 * *w);
                }
            }
        }
        Ok(probe)
    }

    fn standardize(&self, f: &[f64]) -> Vec<f64> {
        f.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }

    fn logits_standardized(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
            .collect()
    }

    pub fn predict(&self, feature: &[f64]) -> usize {
        argmax(&self.logits_standardized(&self.standardize(feature)))
    }

    pub fn accuracy(&self, features: &[Vec<f64>], labels: &[usize]) -> f64 {
        let hits = features
            .iter()
            .zip(labels)
            .filter(|(f, &l)| self.predict(f) == l)
            .count();
        hits as f64 / features.len().max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_linearly_separable_points() {
        let features: Vec<Vec<f64>> = (0..30)
            .map(|i| {
                let c = i % 3;
                vec![c as f64 * 2.0 + 0.01 * i as f64, -(c as f64), 7.0]
            })
            .collect();
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let p = LinearProbe::fit(&features, &labels, 3, ProbeOptions::default()).unwrap();
        assert_eq!(p.accuracy(&features, &labels), 1.0);
    }

    #[test]
    fn uninformative_features_give_chance() {
        let features = vec![vec![1.0, 1.0]; 20];
        let labels: Vec<usize> = (0..20).map(|i| usize::from(i >= 15)).collect();
        let p = LinearProbe::fit(&features, &labels, 2, ProbeOptions::default()).unwrap();
        // constant features: majority class only
        assert_eq!(p.accuracy(&features, &labels), 0.75);
    }
}
