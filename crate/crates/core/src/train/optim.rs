//! Adam and SGD with momentum over a list of tensors.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::MixerParams;
use crate::scalar::Scalar;
use crate::train::config::{OptimizerKind, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSettings {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum: f64,
}

impl OptimizerSettings {
    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum: 0.0,
        }
    }

    pub fn sgd(learning_rate: f64, momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            learning_rate,
            momentum,
            ..Self::adam(learning_rate)
        }
    }
}

impl From<&TrainConfig> for OptimizerSettings {
    fn from(c: &TrainConfig) -> Self {
        Self {
            kind: c.optimizer,
            learning_rate: c.learning_rate,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.adam_eps,
            momentum: c.momentum,
        }
    }
}

/// Moment buffers, one per tensor, created lazily on the first step.
#[derive(Debug, Clone)]
pub struct Optimizer<T: Scalar = f64> {
    settings: OptimizerSettings,
    step: u64,
    first: Vec<Matrix<T>>,
    second: Vec<Matrix<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(settings: OptimizerSettings) -> Self {
        Self {
            settings,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates `params` in place. `names` labels tensors in the error raised
    /// for a non-finite gradient; nothing is modified in that case.
    pub fn step_tensors(
        &mut self,
        params: &mut [&mut Matrix<T>],
        grads: &[&Matrix<T>],
        names: &[String],
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Dimension {
                op: "Optimizer::step",
                lhs: format!("{} parameter tensors", params.len()),
                rhs: format!("{} gradient tensors", grads.len()),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::dims("Optimizer::step", p.shape(), g.shape()));
            }
            if !g.is_finite() {
                let block = names
                    .get(i)
                    .cloned()
                    .unwrap_or_else(|| format!("tensor {i}"));
                return Err(Error::NonFinite { block });
            }
        }
        if self.first.is_empty() {
            self.first = grads
                .iter()
                .map(|g| Matrix::zeros(g.rows(), g.cols()))
                .collect();
            if self.settings.kind == OptimizerKind::Adam {
                self.second = self.first.clone();
            }
        } else if self.first.len() != grads.len() {
            return Err(Error::State(
                "optimizer state belongs to a different parameter set".into(),
            ));
        }
        self.step += 1;
        let s = self.settings;
        let lr = T::of(s.learning_rate);
        match s.kind {
            OptimizerKind::SgdMomentum => {
                let mu = T::of(s.momentum);
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    for ((w, &d), m) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                        *m = mu * *m + d;
                        *w = *w - lr * *m;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (T::of(s.beta1), T::of(s.beta2));
                let one = T::one();
                let t = self.step as i32;
                let c1 = one - T::of(s.beta1.powi(t));
                let c2 = one - T::of(s.beta2.powi(t));
                let eps = T::of(s.eps);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    let moments = m.data_mut().iter_mut().zip(v.data_mut());
                    for ((w, &d), (m, v)) in p.data_mut().iter_mut().zip(g.data()).zip(moments) {
                        *m = b1 * *m + (one - b1) * d;
                        *v = b2 * *v + (one - b2) * d * d;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn step(&mut self, params: &mut MixerParams<T>, grads: &MixerParams<T>) -> Result<()> {
        let names = params.names();
        let grads = grads.tensors();
        self.step_tensors(&mut params.tensors_mut(), &grads, &names)
    }
}
