//! On-disk formats and dataset loading.

mod dataset;
mod manifest;
mod matrix_io;
mod synthetic;

pub use dataset::{load_dataset, load_embedding_bags, load_prototype_bags, sizes_path, Dataset};
pub use manifest::{Manifest, ManifestEntry, MANIFEST_HEADER};
pub use matrix_io::{
    decode_matrix, encode_matrix, read_matrix, read_matrix_widening_f32, write_matrix,
    MATRIX_HEADER_LEN, MATRIX_MAGIC,
};
pub use synthetic::{gen_synthetic, generate, GroundTruth, SyntheticCorpus, SyntheticSpec};
