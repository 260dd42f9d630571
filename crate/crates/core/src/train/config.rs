use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    SgdMomentum,
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Self::Adam),
            "sgd_momentum" | "sgd" => Ok(Self::SgdMomentum),
            other => Err(Error::Config(format!(
                "unknown optimizer `{other}` (adam | sgd_momentum)"
            ))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Adam => "adam",
            Self::SgdMomentum => "sgd_momentum",
        })
    }
}

/// Where the adversarial branch gets its targets from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainSource {
    /// Each training slide is its own domain.
    Slide,
    /// The `domain_id` column of the manifest.
    Manifest,
}

impl FromStr for DomainSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slide" => Ok(Self::Slide),
            "manifest" => Ok(Self::Manifest),
            other => Err(Error::Config(format!(
                "unknown domain source `{other}` (slide | manifest)"
            ))),
        }
    }
}

impl fmt::Display for DomainSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Slide => "slide",
            Self::Manifest => "manifest",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Bags per optimizer step; gradients are averaged over the batch.
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Momentum coefficient for `SgdMomentum`.
    pub momentum: f64,
    /// Multiplier inside the lambda schedule.
    pub alpha: f64,
    /// Subtract 1 from the schedule so that it starts at 0.
    pub lambda_offset: bool,
    /// Overrides the schedule with a constant, e.g. 0 for a detached branch.
    pub fixed_lambda: Option<f64>,
    pub folds: usize,
    pub repeats: usize,
    /// Run only the first folds of each repeat.
    pub fold_limit: Option<usize>,
    pub seed: u64,
    pub dropout_rate: f64,
    pub domain_source: DomainSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 1,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            momentum: 0.9,
            alpha: 1.0,
            lambda_offset: false,
            fixed_lambda: None,
            folds: 5,
            repeats: 1,
            fold_limit: None,
            seed: 0,
            dropout_rate: 0.0,
            domain_source: DomainSource::Slide,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail(format!(
                "adam betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            ));
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return fail("adam_eps must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if let Some(l) = self.fixed_lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return fail(format!("fixed lambda must be >= 0, got {l}"));
            }
        }
        if self.folds < 2 {
            return fail("folds must be at least 2".into());
        }
        if self.repeats == 0 {
            return fail("repeats must be at least 1".into());
        }
        if self.fold_limit == Some(0) {
            return fail("fold_limit must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    /// Lambda used during epoch `e` (0-based) of this run.
    pub fn lambda_at(&self, epoch: usize) -> f64 {
        match self.fixed_lambda {
            Some(l) => l,
            None => {
                let l = super::lambda_schedule(epoch, self.epochs, self.alpha);
                if self.lambda_offset {
                    l - 1.0
                } else {
                    l
                }
            }
        }
    }
}
