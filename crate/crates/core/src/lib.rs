//! Prototype-based slide classification.
//!
//! Bags of patch embeddings are reduced to `k` k-means prototypes per slide
//! ([`reduce`]), and the resulting `k x N` tables are classified by a stack of
//! Mixer blocks with a domain-adversarial branch ([`model`]), trained and
//! cross-validated by [`train`]. All numerics are generic over [`Scalar`]
//! (`f32` / `f64`); the unsuffixed aliases below fix `f64`, which is what the
//! file formats store.

pub mod bag;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod kmeans;
pub mod matrix;
pub mod model;
pub mod ops;
pub mod reduce;
pub mod scalar;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = matrix::Matrix<f64>;
pub type MatrixF32 = matrix::Matrix<f32>;
pub type EmbeddingBag = bag::EmbeddingBag<f64>;
pub type PrototypeBag = bag::PrototypeBag<f64>;
pub type KMeansResult = kmeans::KMeansResult<f64>;
pub type Mixer = model::Mixer<f64>;
pub type MixerF32 = model::Mixer<f32>;
pub type MixerParams = model::MixerParams<f64>;
