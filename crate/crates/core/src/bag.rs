//! Slide-level bags: the raw patch embeddings and their prototype reduction.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// One slide's `K x N` patch embeddings with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBag<T: Scalar = f64> {
    pub slide_id: String,
    pub class_label: usize,
    pub domain_id: usize,
    pub features: Matrix<T>,
}

impl<T: Scalar> EmbeddingBag<T> {
    pub fn new(
        slide_id: impl Into<String>,
        class_label: usize,
        domain_id: usize,
        features: Matrix<T>,
    ) -> Result<Self> {
        let slide_id = slide_id.into();
        if features.rows() == 0 || features.cols() == 0 {
            return Err(Error::Data(format!(
                "bag `{slide_id}` is empty ({}x{})",
                features.rows(),
                features.cols()
            )));
        }
        if !features.is_finite() {
            return Err(Error::Data(format!(
                "bag `{slide_id}` has non-finite features"
            )));
        }
        Ok(Self {
            slide_id,
            class_label,
            domain_id,
            features,
        })
    }

    /// Number of patches, `K`.
    pub fn instances(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// `k` canonically ordered centroids of one slide.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBag<T: Scalar = f64> {
    pub slide_id: String,
    pub class_label: usize,
    pub domain_id: usize,
    pub prototypes: Matrix<T>,
    /// Points per prototype row; padded rows of a degenerate bag carry 0.
    pub cluster_sizes: Vec<usize>,
}

impl<T: Scalar> PrototypeBag<T> {
    pub fn k(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.cols()
    }

    pub fn source_instances(&self) -> usize {
        self.cluster_sizes.iter().sum()
    }
}
