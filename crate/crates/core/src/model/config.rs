use std::fmt;

use crate::error::{Error, Result};

/// Architecture sizes of the prototype Mixer.
#[derive(Debug, Clone, PartialEq)]
pub struct MixerConfig {
    /// Prototype rows per slide (`k`).
    pub tokens: usize,
    /// Embedding width (`N`).
    pub channels: usize,
    /// Token-mixing hidden width (`D_S`).
    pub token_hidden: usize,
    /// Channel-mixing hidden width (`D_C`).
    pub channel_hidden: usize,
    /// Number of Mixer blocks (`M`).
    pub blocks: usize,
    pub num_classes: usize,
    pub num_domains: usize,
    pub domain_hidden: usize,
    /// Inverted-dropout rate after each MLP output, train mode only.
    pub dropout_rate: f64,
    /// Layer norm between the last block and pooling.
    pub final_norm: bool,
}

impl Default for MixerConfig {
    /// Reference sizes: `N = D_S = 1024`, `D_C = 2048`, `M = 12`, `k = 5`.
    fn default() -> Self {
        Self {
            tokens: 5,
            channels: 1024,
            token_hidden: 1024,
            channel_hidden: 2048,
            blocks: 12,
            num_classes: 3,
            num_domains: 1,
            domain_hidden: 512,
            dropout_rate: 0.0,
            final_norm: true,
        }
    }
}

/// Learnable scalars per parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub per_block: usize,
    pub blocks: usize,
    pub final_norm: usize,
    pub classifier: usize,
    pub domain_branch: usize,
}

impl ParamCount {
    /// Backbone and classifier: everything used at inference.
    pub fn inference(&self) -> usize {
        self.blocks + self.final_norm + self.classifier
    }

    pub fn total(&self) -> usize {
        self.inference() + self.domain_branch
    }
}

impl fmt::Display for ParamCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "total={} (mixer_blocks={} [{} per block, incl. norm affine and MLP biases], final_norm={}, classifier={}, domain_branch={})",
            self.total(),
            self.blocks,
            self.per_block,
            self.final_norm,
            self.classifier,
            self.domain_branch
        )
    }
}

impl MixerConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("tokens", self.tokens),
            ("channels", self.channels),
            ("token_hidden", self.token_hidden),
            ("channel_hidden", self.channel_hidden),
            ("blocks", self.blocks),
            ("num_classes", self.num_classes),
            ("num_domains", self.num_domains),
            ("domain_hidden", self.domain_hidden),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> ParamCount {
        let (k, n, ds, dc) = (
            self.tokens,
            self.channels,
            self.token_hidden,
            self.channel_hidden,
        );
        let (h, c, d) = (self.domain_hidden, self.num_classes, self.num_domains);
        let per_block = 2 * n + (ds * k + ds) + (k * ds + k) + 2 * n + (dc * n + dc) + (n * dc + n);
        ParamCount {
            per_block,
            blocks: per_block * self.blocks,
            final_norm: if self.final_norm { 2 * n } else { 0 },
            classifier: c * n + c,
            domain_branch: (h * n + h) + (h * h + h) + (d * h + d),
        }
    }

    /// Floating-point operations of one forward pass, counting two per
    /// multiply-add and one per elementwise operation (GELU and layer-norm
    /// steps counted as a single operation per element).
    pub fn forward_flops(&self) -> usize {
        let (k, n, ds, dc) = (
            self.tokens,
            self.channels,
            self.token_hidden,
            self.channel_hidden,
        );
        let (h, c, d) = (self.domain_hidden, self.num_classes, self.num_domains);
        let norm = 8 * k * n;
        let token = 2 * ds * k * n + ds * n + ds * n + 2 * k * ds * n + k * n + k * n;
        let channel = 2 * k * n * dc + k * dc + k * dc + 2 * k * dc * n + k * n + k * n;
        let per_block = norm + token + norm + channel;
        let final_norm = if self.final_norm { norm } else { 0 };
        let pool = k * n;
        let head = 2 * c * n + c;
        let domain = 2 * h * n + 2 * h + 2 * h * h + 2 * h + 2 * d * h + d;
        per_block * self.blocks + final_norm + pool + head + domain
    }
}
