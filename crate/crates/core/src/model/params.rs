use rand::Rng as _;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::config::MixerConfig;
use crate::scalar::Scalar;
use crate::seed;

/// One Mixer block. Vectors are stored as `1 x n` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T: Scalar = f64> {
    pub token_gain: Matrix<T>,
    pub token_bias: Matrix<T>,
    /// `D_S x k`
    pub w1: Matrix<T>,
    pub b1: Matrix<T>,
    /// `k x D_S`
    pub w2: Matrix<T>,
    pub b2: Matrix<T>,
    pub channel_gain: Matrix<T>,
    pub channel_bias: Matrix<T>,
    /// `D_C x N`
    pub w3: Matrix<T>,
    pub b3: Matrix<T>,
    /// `N x D_C`
    pub w4: Matrix<T>,
    pub b4: Matrix<T>,
}

const BLOCK_FIELDS: [&str; 12] = [
    "token_gain",
    "token_bias",
    "w1",
    "b1",
    "w2",
    "b2",
    "channel_gain",
    "channel_bias",
    "w3",
    "b3",
    "w4",
    "b4",
];

const TAIL_FIELDS: [&str; 10] = [
    "final_gain",
    "final_bias",
    "classifier.w",
    "classifier.b",
    "domain.w1",
    "domain.b1",
    "domain.w2",
    "domain.b2",
    "domain.w3",
    "domain.b3",
];

/// Index of the first domain-branch tensor within [`TAIL_FIELDS`].
const DOMAIN_TAIL_START: usize = 4;

impl<T: Scalar> BlockParams<T> {
    fn zeros(c: &MixerConfig) -> Self {
        let (k, n, ds, dc) = (c.tokens, c.channels, c.token_hidden, c.channel_hidden);
        Self {
            token_gain: Matrix::zeros(1, n),
            token_bias: Matrix::zeros(1, n),
            w1: Matrix::zeros(ds, k),
            b1: Matrix::zeros(1, ds),
            w2: Matrix::zeros(k, ds),
            b2: Matrix::zeros(1, k),
            channel_gain: Matrix::zeros(1, n),
            channel_bias: Matrix::zeros(1, n),
            w3: Matrix::zeros(dc, n),
            b3: Matrix::zeros(1, dc),
            w4: Matrix::zeros(n, dc),
            b4: Matrix::zeros(1, n),
        }
    }

    fn tensors(&self) -> [&Matrix<T>; 12] {
        [
            &self.token_gain,
            &self.token_bias,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.channel_gain,
            &self.channel_bias,
            &self.w3,
            &self.b3,
            &self.w4,
            &self.b4,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Matrix<T>; 12] {
        [
            &mut self.token_gain,
            &mut self.token_bias,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.channel_gain,
            &mut self.channel_bias,
            &mut self.w3,
            &mut self.b3,
            &mut self.w4,
            &mut self.b4,
        ]
    }
}

/// Every learnable tensor of the network. The same type holds gradients and
/// optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct MixerParams<T: Scalar = f64> {
    pub blocks: Vec<BlockParams<T>>,
    pub final_gain: Matrix<T>,
    pub final_bias: Matrix<T>,
    /// `classes x N`
    pub cls_w: Matrix<T>,
    pub cls_b: Matrix<T>,
    /// `H x N`
    pub dom_w1: Matrix<T>,
    pub dom_b1: Matrix<T>,
    /// `H x H`
    pub dom_w2: Matrix<T>,
    pub dom_b2: Matrix<T>,
    /// `domains x H`
    pub dom_w3: Matrix<T>,
    pub dom_b3: Matrix<T>,
}

impl<T: Scalar> MixerParams<T> {
    /// All-zero tensors shaped for `config` (final-norm tensors are present
    /// even when the config disables that norm).
    pub fn zeros(config: &MixerConfig) -> Self {
        let (n, c, h, d) = (
            config.channels,
            config.num_classes,
            config.domain_hidden,
            config.num_domains,
        );
        Self {
            blocks: (0..config.blocks)
                .map(|_| BlockParams::zeros(config))
                .collect(),
            final_gain: Matrix::zeros(1, n),
            final_bias: Matrix::zeros(1, n),
            cls_w: Matrix::zeros(c, n),
            cls_b: Matrix::zeros(1, c),
            dom_w1: Matrix::zeros(h, n),
            dom_b1: Matrix::zeros(1, h),
            dom_w2: Matrix::zeros(h, h),
            dom_b2: Matrix::zeros(1, h),
            dom_w3: Matrix::zeros(d, h),
            dom_b3: Matrix::zeros(1, d),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(T::zero());
        }
        z
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, norm gains 1, biases 0, drawn in
    /// tensor order from a ChaCha8 stream seeded with `seed`.
    pub fn init(config: &MixerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut p = Self::zeros(config);
        let mut rng = seed::rng(seed);
        let names = p.names();
        for (name, t) in names.iter().zip(p.tensors_mut()) {
            let field = name.rsplit(['.']).next().unwrap_or(name);
            if field.ends_with("gain") {
                t.fill(T::one());
            } else if field.starts_with('w') {
                let bound = 1.0 / (t.cols() as f64).sqrt();
                for v in t.data_mut() {
                    *v = T::of(rng.gen_range(-bound..=bound));
                }
            }
        }
        Ok(p)
    }

    /// Tensors in serialization order: each block's fields, then final norm,
    /// classifier and domain branch.
    pub fn tensors(&self) -> Vec<&Matrix<T>> {
        let mut out: Vec<&Matrix<T>> = self.blocks.iter().flat_map(|b| b.tensors()).collect();
        out.extend([
            &self.final_gain,
            &self.final_bias,
            &self.cls_w,
            &self.cls_b,
            &self.dom_w1,
            &self.dom_b1,
            &self.dom_w2,
            &self.dom_b2,
            &self.dom_w3,
            &self.dom_b3,
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut out: Vec<&mut Matrix<T>> = self
            .blocks
            .iter_mut()
            .flat_map(|b| b.tensors_mut())
            .collect();
        out.extend([
            &mut self.final_gain,
            &mut self.final_bias,
            &mut self.cls_w,
            &mut self.cls_b,
            &mut self.dom_w1,
            &mut self.dom_b1,
            &mut self.dom_w2,
            &mut self.dom_b2,
            &mut self.dom_w3,
            &mut self.dom_b3,
        ]);
        out
    }

    /// Names parallel to [`Self::tensors`], e.g. `block3.w1`, `domain.b2`.
    pub fn names(&self) -> Vec<String> {
        let mut out: Vec<String> = (0..self.blocks.len())
            .flat_map(|b| BLOCK_FIELDS.iter().map(move |f| format!("block{b}.{f}")))
            .collect();
        out.extend(TAIL_FIELDS.iter().map(|s| s.to_string()));
        out
    }

    pub fn tensor_count(&self) -> usize {
        self.blocks.len() * BLOCK_FIELDS.len() + TAIL_FIELDS.len()
    }

    /// Whether tensor `index` (in [`Self::tensors`] order) belongs to the
    /// domain predictor rather than the backbone or classifier.
    pub fn is_domain_tensor(&self, index: usize) -> bool {
        index >= self.blocks.len() * BLOCK_FIELDS.len() + DOMAIN_TAIL_START
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: T) {
        for t in self.tensors_mut() {
            t.scale(alpha);
        }
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .iter()
            .position(|t| !t.is_finite())
            .map(|i| self.names()[i].clone())
    }

    /// Checks that every tensor has the shape `config` prescribes.
    pub fn check_shapes(&self, config: &MixerConfig) -> Result<()> {
        let expected = Self::zeros(config);
        if expected.blocks.len() != self.blocks.len() {
            return Err(Error::Dimension {
                op: "MixerParams",
                lhs: format!("{} blocks", self.blocks.len()),
                rhs: format!("{} blocks", expected.blocks.len()),
            });
        }
        for ((name, a), b) in self
            .names()
            .iter()
            .zip(self.tensors())
            .zip(expected.tensors())
        {
            if a.shape() != b.shape() {
                return Err(Error::Dimension {
                    op: "MixerParams",
                    lhs: format!("{name} {}x{}", a.rows(), a.cols()),
                    rhs: format!("expected {}x{}", b.rows(), b.cols()),
                });
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> MixerParams<U> {
        let cast_block = |b: &BlockParams<T>| BlockParams {
            token_gain: b.token_gain.cast(),
            token_bias: b.token_bias.cast(),
            w1: b.w1.cast(),
            b1: b.b1.cast(),
            w2: b.w2.cast(),
            b2: b.b2.cast(),
            channel_gain: b.channel_gain.cast(),
            channel_bias: b.channel_bias.cast(),
            w3: b.w3.cast(),
            b3: b.b3.cast(),
            w4: b.w4.cast(),
            b4: b.b4.cast(),
        };
        MixerParams {
            blocks: self.blocks.iter().map(cast_block).collect(),
            final_gain: self.final_gain.cast(),
            final_bias: self.final_bias.cast(),
            cls_w: self.cls_w.cast(),
            cls_b: self.cls_b.cast(),
            dom_w1: self.dom_w1.cast(),
            dom_b1: self.dom_b1.cast(),
            dom_w2: self.dom_w2.cast(),
            dom_b2: self.dom_b2.cast(),
            dom_w3: self.dom_w3.cast(),
            dom_b3: self.dom_b3.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> MixerConfig {
        MixerConfig {
            tokens: 4,
            channels: 8,
            token_hidden: 6,
            channel_hidden: 10,
            blocks: 2,
            num_classes: 3,
            num_domains: 5,
            domain_hidden: 7,
            ..Default::default()
        }
    }

    #[test]
    fn scalar_count_matches_closed_form() {
        for final_norm in [true, false] {
            let c = MixerConfig {
                final_norm,
                ..small()
            };
            let p = MixerParams::<f64>::zeros(&c);
            let stored = p.scalar_count();
            let pc = c.param_count();
            if final_norm {
                assert_eq!(stored, pc.total());
            } else {
                assert_eq!(stored, pc.total() + 2 * c.channels);
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_follows_rule() {
        let c = small();
        let a = MixerParams::<f64>::init(&c, 5).unwrap();
        let b = MixerParams::<f64>::init(&c, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, MixerParams::init(&c, 6).unwrap());
        for blk in &a.blocks {
            assert!(blk.token_gain.data().iter().all(|&g| g == 1.0));
            assert!(blk.channel_gain.data().iter().all(|&g| g == 1.0));
            assert!(blk.b1.data().iter().all(|&v| v == 0.0));
            let bound = 1.0 / (c.tokens as f64).sqrt();
            assert!(blk.w1.data().iter().all(|v| v.abs() <= bound));
            let bound = 1.0 / (c.channel_hidden as f64).sqrt();
            assert!(blk.w4.data().iter().all(|v| v.abs() <= bound));
        }
        assert!(a.final_gain.data().iter().all(|&g| g == 1.0));
        assert!(a.dom_b3.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn large_weight_sample_mean_near_zero() {
        let c = MixerConfig {
            tokens: 2,
            channels: 1024,
            token_hidden: 2,
            channel_hidden: 1024,
            blocks: 1,
            num_classes: 2,
            num_domains: 2,
            domain_hidden: 2,
            ..Default::default()
        };
        let p = MixerParams::<f64>::init(&c, 1).unwrap();
        let w = &p.blocks[0].w3;
        assert_eq!(w.shape(), (1024, 1024));
        let n = w.len() as f64;
        let mean = w.data().iter().sum::<f64>() / n;
        let a = 1.0 / 1024f64.sqrt();
        let std_err = (a * a / 3.0 / n).sqrt();
        assert!(mean.abs() < 3.0 * std_err, "mean {mean} vs se {std_err}");
    }

    #[test]
    fn names_align_with_tensors() {
        let p = MixerParams::<f64>::zeros(&small());
        let names = p.names();
        assert_eq!(names.len(), p.tensors().len());
        assert_eq!(names.len(), p.tensor_count());
        assert_eq!(names[2], "block0.w1");
        assert_eq!(names[14], "block1.w1");
        let first_domain = names.iter().position(|n| n == "domain.w1").unwrap();
        assert!(!p.is_domain_tensor(first_domain - 1));
        assert!(p.is_domain_tensor(first_domain));
        assert!(p.check_shapes(&small()).is_ok());
        assert!(p
            .check_shapes(&MixerConfig {
                tokens: 5,
                ..small()
            })
            .is_err());
    }
}
