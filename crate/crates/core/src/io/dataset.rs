use std::path::{Path, PathBuf};

use crate::bag::{EmbeddingBag, PrototypeBag};
use crate::error::{Error, Result};
use crate::io::manifest::Manifest;
use crate::io::matrix_io::{read_matrix, read_matrix_widening_f32};
use crate::matrix::Matrix;

/// A manifest with every referenced matrix loaded, in manifest order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub bags: Vec<EmbeddingBag>,
}

/// Sidecar holding the cluster sizes of a prototype file: `x.pmb` becomes
/// `x.sizes.pmb`, a `1 x k` matrix.
pub fn sizes_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.sizes.pmb"))
}

fn load_matrices(manifest: &Manifest, widen_f32: bool) -> Result<Vec<Matrix>> {
    let mut dim: Option<(usize, &str)> = None;
    let mut out = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let path = manifest.resolve(entry);
        if !path.is_file() {
            return Err(Error::Data(format!(
                "slide `{}`: file {} not found",
                entry.slide_id,
                path.display()
            )));
        }
        let m = if widen_f32 {
            read_matrix_widening_f32(&path)?
        } else {
            read_matrix(&path)?
        };
        match dim {
            None => dim = Some((m.cols(), &entry.slide_id)),
            Some((n, first)) if n != m.cols() => {
                return Err(Error::Data(format!(
                    "slide `{}` has {} channels but `{first}` has {n}",
                    entry.slide_id,
                    m.cols()
                )))
            }
            Some(_) => {}
        }
        out.push(m);
    }
    Ok(out)
}

pub fn load_embedding_bags(manifest: &Manifest, widen_f32: bool) -> Result<Vec<EmbeddingBag>> {
    manifest.validate()?;
    load_matrices(manifest, widen_f32)?
        .into_iter()
        .zip(&manifest.entries)
        .map(|(m, e)| EmbeddingBag::new(e.slide_id.clone(), e.class_label, e.domain_id, m))
        .collect()
}

/// Loads prototype tables. Cluster sizes come from the sizes sidecar when one
/// exists and are left as zeros otherwise.
pub fn load_prototype_bags(manifest: &Manifest) -> Result<Vec<PrototypeBag>> {
    manifest.validate()?;
    let mats = load_matrices(manifest, false)?;
    let mut bags = Vec::with_capacity(mats.len());
    for (m, e) in mats.into_iter().zip(&manifest.entries) {
        let sidecar = sizes_path(&manifest.resolve(e));
        let cluster_sizes = if sidecar.is_file() {
            let s = read_matrix(&sidecar)?;
            if s.len() != m.rows() {
                return Err(Error::Data(format!(
                    "slide `{}`: {} cluster sizes for {} prototypes",
                    e.slide_id,
                    s.len(),
                    m.rows()
                )));
            }
            s.data().iter().map(|&v| v as usize).collect()
        } else {
            vec![0; m.rows()]
        };
        bags.push(PrototypeBag {
            slide_id: e.slide_id.clone(),
            class_label: e.class_label,
            domain_id: e.domain_id,
            prototypes: m,
            cluster_sizes,
        });
    }
    Ok(bags)
}

/// Reads a manifest and all its embedding bags.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest = Manifest::read(manifest_path)?;
    let bags = load_embedding_bags(&manifest, false)?;
    Ok(Dataset { manifest, bags })
}
