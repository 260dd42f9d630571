//! The full network: Mixer blocks, optional final norm, mean pooling over
//! prototypes, the classifier head, and the domain predictor attached to the
//! pooled vector through a gradient-reversal layer.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::block::{block_backward, block_forward, BlockCache};
use crate::model::config::MixerConfig;
use crate::model::params::MixerParams;
use crate::ops::{
    gelu, gelu_grad, layer_norm_rows, layer_norm_rows_backward, LayerNormCache, LAYER_NORM_EPS,
};
use crate::scalar::Scalar;

/// Train mode samples dropout masks from the given generator.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn rand::RngCore),
}

/// Activations kept between a forward pass and its backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T: Scalar> {
    version: u64,
    train: bool,
    blocks: Vec<BlockCache<T>>,
    final_ln: Option<LayerNormCache<T>>,
    tokens: usize,
    pooled: Vec<T>,
    dom_h1: Vec<T>,
    dom_a1: Vec<T>,
    dom_h2: Vec<T>,
    dom_a2: Vec<T>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Mean-pooled slide representation fed to both heads.
    pub fn pooled(&self) -> &[T] {
        &self.pooled
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T: Scalar> {
    pub class_logits: Vec<T>,
    pub domain_logits: Vec<T>,
    pub cache: ForwardCache<T>,
}

/// Gradient-reversal backward: `-lambda * upstream`. The forward direction is
/// the identity.
pub fn grad_reverse<T: Scalar>(upstream: &[T], lambda: T) -> Vec<T> {
    upstream.iter().map(|&g| -(lambda * g)).collect()
}

/// `W · x + b` for a `rows x cols` weight.
fn affine<T: Scalar>(w: &Matrix<T>, b: &Matrix<T>, x: &[T]) -> Vec<T> {
    (0..w.rows())
        .map(|r| {
            w.row(r)
                .iter()
                .zip(x)
                .fold(T::zero(), |acc, (&a, &v)| acc + a * v)
                + b.data()[r]
        })
        .collect()
}

/// Accumulates `dW += d ⊗ x`, `db += d` and returns `Wᵀ d`.
fn affine_backward<T: Scalar>(
    w: &Matrix<T>,
    x: &[T],
    d: &[T],
    dw: &mut Matrix<T>,
    db: &mut Matrix<T>,
) -> Vec<T> {
    let mut dx = vec![T::zero(); w.cols()];
    for (r, &g) in d.iter().enumerate() {
        db.data_mut()[r] = db.data()[r] + g;
        for ((dwv, &xv), (dxv, &wv)) in dw
            .row_mut(r)
            .iter_mut()
            .zip(x)
            .zip(dx.iter_mut().zip(w.row(r)))
        {
            *dwv = *dwv + g * xv;
            *dxv = *dxv + wv * g;
        }
    }
    dx
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixer<T: Scalar = f64> {
    config: MixerConfig,
    params: MixerParams<T>,
    version: u64,
}

impl<T: Scalar> Mixer<T> {
    pub fn new(config: MixerConfig, seed: u64) -> Result<Self> {
        let params = MixerParams::init(&config, seed)?;
        Ok(Self {
            config,
            params,
            version: 0,
        })
    }

    pub fn from_params(config: MixerConfig, params: MixerParams<T>) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Self {
            config,
            params,
            version: 0,
        })
    }

    pub fn config(&self) -> &MixerConfig {
        &self.config
    }

    pub fn params(&self) -> &MixerParams<T> {
        &self.params
    }

    /// Mutable access invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut MixerParams<T> {
        self.version += 1;
        &mut self.params
    }

    fn check_input(&self, x: &Matrix<T>) -> Result<()> {
        let expected = (self.config.tokens, self.config.channels);
        if x.shape() != expected {
            return Err(Error::Dimension {
                op: "Mixer::forward",
                lhs: format!("prototypes {}x{}", x.rows(), x.cols()),
                rhs: format!("model expects k x N = {}x{}", expected.0, expected.1),
            });
        }
        Ok(())
    }

    /// Runs blocks, final norm and pooling; returns the pooled vector.
    #[allow(clippy::type_complexity)]
    fn trunk(
        &self,
        x: &Matrix<T>,
        mode: &mut Mode<'_>,
    ) -> Result<(Vec<T>, Vec<BlockCache<T>>, Option<LayerNormCache<T>>)> {
        self.check_input(x)?;
        let rate = self.config.dropout_rate;
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.params.blocks.len());
        for block in &self.params.blocks {
            let dropout = match mode {
                Mode::Train(rng) => Some((rate, &mut **rng as &mut dyn rand::RngCore)),
                Mode::Eval => None,
            };
            let (z, cache) = block_forward(&h, block, dropout)?;
            caches.push(cache);
            h = z;
        }
        let final_ln = if self.config.final_norm {
            let (y, c) = layer_norm_rows(
                &h,
                self.params.final_gain.data(),
                self.params.final_bias.data(),
                T::of(LAYER_NORM_EPS),
            )?;
            h = y;
            Some(c)
        } else {
            None
        };
        Ok((h.mean_rows(), caches, final_ln))
    }

    /// Pooled slide representation in eval mode.
    pub fn embed(&self, prototypes: &Matrix<T>) -> Result<Vec<T>> {
        Ok(self.trunk(prototypes, &mut Mode::Eval)?.0)
    }

    pub fn forward(&self, prototypes: &Matrix<T>, mut mode: Mode<'_>) -> Result<ForwardOutput<T>> {
        let train = matches!(mode, Mode::Train(_));
        let (pooled, blocks, final_ln) = self.trunk(prototypes, &mut mode)?;
        let p = &self.params;
        let class_logits = affine(&p.cls_w, &p.cls_b, &pooled);
        let dom_h1 = affine(&p.dom_w1, &p.dom_b1, &pooled);
        let dom_a1: Vec<T> = dom_h1.iter().map(|&v| gelu(v)).collect();
        let dom_h2 = affine(&p.dom_w2, &p.dom_b2, &dom_a1);
        let dom_a2: Vec<T> = dom_h2.iter().map(|&v| gelu(v)).collect();
        let domain_logits = affine(&p.dom_w3, &p.dom_b3, &dom_a2);
        Ok(ForwardOutput {
            class_logits,
            domain_logits,
            cache: ForwardCache {
                version: self.version,
                train,
                blocks,
                final_ln,
                tokens: prototypes.rows(),
                pooled,
                dom_h1,
                dom_a1,
                dom_h2,
                dom_a2,
            },
        })
    }

    fn check_cache(&self, cache: &ForwardCache<T>) -> Result<()> {
        if !cache.train {
            return Err(Error::State(
                "backward needs a train-mode forward cache".into(),
            ));
        }
        if cache.version != self.version {
            return Err(Error::State(format!(
                "forward cache is stale: parameters changed since the forward pass (cache v{}, model v{})",
                cache.version, self.version
            )));
        }
        Ok(())
    }

    /// Gradients of every parameter given upstream gradients of the two
    /// logit vectors.
    ///
    /// The domain predictor receives the plain gradient of the domain loss.
    /// Backbone and pooled representation receive the class gradient plus the
    /// domain gradient scaled by `-lambda`, so one descent step on the result
    /// minimizes the class loss, fits the domain predictor, and pushes the
    /// backbone to increase the domain loss.
    pub fn backward(
        &self,
        cache: ForwardCache<T>,
        d_class_logits: &[T],
        d_domain_logits: &[T],
        lambda: T,
    ) -> Result<MixerParams<T>> {
        self.check_cache(&cache)?;
        if d_class_logits.len() != self.config.num_classes
            || d_domain_logits.len() != self.config.num_domains
        {
            return Err(Error::Dimension {
                op: "Mixer::backward",
                lhs: format!(
                    "upstream {}+{}",
                    d_class_logits.len(),
                    d_domain_logits.len()
                ),
                rhs: format!(
                    "classes+domains {}+{}",
                    self.config.num_classes, self.config.num_domains
                ),
            });
        }
        if lambda < T::zero() {
            return Err(Error::Parameter(format!(
                "lambda must be >= 0, got {lambda}"
            )));
        }
        let p = &self.params;
        let (mut g, d_pooled_domain) = self.domain_head_backward(&cache, d_domain_logits)?;
        let mut d_pooled = affine_backward(
            &p.cls_w,
            &cache.pooled,
            d_class_logits,
            &mut g.cls_w,
            &mut g.cls_b,
        );
        for (d, r) in d_pooled
            .iter_mut()
            .zip(grad_reverse(&d_pooled_domain, lambda))
        {
            *d = *d + r;
        }
        self.trunk_backward(&cache, &d_pooled, &mut g)?;
        Ok(g)
    }

    /// Backward through the domain predictor alone: its parameter gradients
    /// (every other tensor zero) and the plain gradient with respect to the
    /// pooled vector, before any reversal.
    pub fn domain_head_backward(
        &self,
        cache: &ForwardCache<T>,
        d_domain_logits: &[T],
    ) -> Result<(MixerParams<T>, Vec<T>)> {
        self.check_cache(cache)?;
        if d_domain_logits.len() != self.config.num_domains {
            return Err(Error::Dimension {
                op: "Mixer::domain_head_backward",
                lhs: format!("upstream {}", d_domain_logits.len()),
                rhs: format!("domains {}", self.config.num_domains),
            });
        }
        let p = &self.params;
        let mut g = p.zeros_like();
        let da2 = affine_backward(
            &p.dom_w3,
            &cache.dom_a2,
            d_domain_logits,
            &mut g.dom_w3,
            &mut g.dom_b3,
        );
        let dh2: Vec<T> = da2
            .iter()
            .zip(&cache.dom_h2)
            .map(|(&d, &h)| d * gelu_grad(h))
            .collect();
        let da1 = affine_backward(&p.dom_w2, &cache.dom_a1, &dh2, &mut g.dom_w2, &mut g.dom_b2);
        let dh1: Vec<T> = da1
            .iter()
            .zip(&cache.dom_h1)
            .map(|(&d, &h)| d * gelu_grad(h))
            .collect();
        let d_pooled =
            affine_backward(&p.dom_w1, &cache.pooled, &dh1, &mut g.dom_w1, &mut g.dom_b1);
        Ok((g, d_pooled))
    }

    /// Backward from the pooled vector through pooling, final norm and the
    /// blocks, accumulating into `grads`.
    pub fn trunk_backward(
        &self,
        cache: &ForwardCache<T>,
        d_pooled: &[T],
        grads: &mut MixerParams<T>,
    ) -> Result<()> {
        self.check_cache(cache)?;
        if d_pooled.len() != self.config.channels {
            return Err(Error::Dimension {
                op: "Mixer::trunk_backward",
                lhs: format!("pooled gradient {}", d_pooled.len()),
                rhs: format!("channels {}", self.config.channels),
            });
        }
        let p = &self.params;
        let k = T::of_usize(cache.tokens);
        let per_token: Vec<T> = d_pooled.iter().map(|&d| d / k).collect();
        let mut dh = Matrix::from_fn(cache.tokens, self.config.channels, |_, c| per_token[c]);
        if let Some(ln) = &cache.final_ln {
            dh = layer_norm_rows_backward(
                &dh,
                p.final_gain.data(),
                ln,
                grads.final_gain.data_mut(),
                grads.final_bias.data_mut(),
            );
        }
        for ((block, g), bc) in p
            .blocks
            .iter()
            .zip(grads.blocks.iter_mut())
            .zip(&cache.blocks)
            .rev()
        {
            dh = block_backward(&dh, block, bc, g);
        }
        Ok(())
    }
}
