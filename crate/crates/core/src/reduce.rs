//! Bag-to-prototype reduction.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::bag::{EmbeddingBag, PrototypeBag};
use crate::error::{Error, Result};
use crate::io::{read_matrix, sizes_path, write_matrix, Manifest, ManifestEntry};
use crate::kmeans::{canonical_order, kmeans_restarts, KMeansOptions};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::seed;

/// Outcome of reducing one bag.
#[derive(Debug, Clone)]
pub struct Reduced<T: Scalar = f64> {
    pub bag: PrototypeBag<T>,
    pub inertia: T,
    pub iterations: usize,
    /// Set when the bag had fewer patches than requested prototypes and its
    /// centroid list was repeated to fill `k` rows.
    pub padded: bool,
}

/// Clusters a bag into `k` prototypes in canonical order.
///
/// The clustering seed is derived from `(seed, slide_id)`. When the bag has
/// fewer than `k` patches it is clustered with `k = K` and the ordered
/// centroids are repeated cyclically; the repeats have size 0.
pub fn reduce_bag<T: Scalar>(
    bag: &EmbeddingBag<T>,
    k: usize,
    seed: u64,
    options: &KMeansOptions,
) -> Result<Reduced<T>> {
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    let instances = bag.instances();
    let k_eff = k.min(instances);
    let run = kmeans_restarts(
        &bag.features,
        k_eff,
        seed::for_slide(seed, &bag.slide_id),
        options,
    )?;
    let sizes = run.cluster_sizes();
    let order = canonical_order(&run.centroids, &sizes);

    let mut prototypes = Matrix::zeros(k, bag.dim());
    let mut cluster_sizes = vec![0; k];
    for row in 0..k {
        let src = order[row % k_eff];
        prototypes
            .row_mut(row)
            .copy_from_slice(run.centroids.row(src));
        if row < k_eff {
            cluster_sizes[row] = sizes[src];
        }
    }
    Ok(Reduced {
        bag: PrototypeBag {
            slide_id: bag.slide_id.clone(),
            class_label: bag.class_label,
            domain_id: bag.domain_id,
            prototypes,
            cluster_sizes,
        },
        inertia: run.inertia,
        iterations: run.iterations,
        padded: k > instances,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub slide_id: String,
    pub instances: usize,
    pub k: usize,
    pub inertia: f64,
    pub iterations: usize,
    /// `ok`, `padded`, or `error: ...`.
    pub flag: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReductionReport {
    pub rows: Vec<ReportRow>,
}

impl ReductionReport {
    pub fn failures(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.flag.starts_with("error"))
            .count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("slide_id,K,k,inertia,iterations,flag\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:e},{},{}",
                r.slide_id,
                r.instances,
                r.k,
                r.inertia,
                r.iterations,
                r.flag.replace(',', ";")
            );
        }
        s
    }
}

/// Reduces every bag listed in `manifest` and writes
/// `out_dir/manifest.tsv`, `out_dir/prototypes/<slide>.pmb` (+ sizes sidecar)
/// and `out_dir/report.csv`.
///
/// Unreadable bags are reported and skipped; the call fails only when the
/// manifest is empty or no bag could be reduced.
pub fn reduce_dataset(
    manifest: &Manifest,
    k: usize,
    seed: u64,
    options: &KMeansOptions,
    out_dir: impl AsRef<Path>,
) -> Result<ReductionReport> {
    if manifest.entries.is_empty() {
        return Err(Error::Data("no bags in manifest".into()));
    }
    manifest.validate()?;
    let out = out_dir.as_ref();
    let proto_dir = out.join("prototypes");
    fs::create_dir_all(&proto_dir).map_err(|e| Error::io(&proto_dir, e))?;

    let results: Vec<Result<(ManifestEntry, Reduced)>> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let features = read_matrix(manifest.resolve(entry))?;
            let bag = EmbeddingBag::new(
                entry.slide_id.clone(),
                entry.class_label,
                entry.domain_id,
                features,
            )?;
            let reduced = reduce_bag(&bag, k, seed, options)?;
            let rel = PathBuf::from("prototypes").join(format!("{}.pmb", entry.slide_id));
            let path = out.join(&rel);
            write_matrix(&reduced.bag.prototypes, &path)?;
            let sizes = Matrix::row_vector(
                reduced
                    .bag
                    .cluster_sizes
                    .iter()
                    .map(|&s| s as f64)
                    .collect(),
            );
            write_matrix(&sizes, sizes_path(&path))?;
            Ok((
                ManifestEntry {
                    path: rel,
                    ..entry.clone()
                },
                reduced,
            ))
        })
        .collect();

    let mut report = ReductionReport::default();
    let mut reduced_manifest =
        Manifest::new(manifest.dataset_name.clone(), manifest.num_classes, out);
    for (entry, result) in manifest.entries.iter().zip(results) {
        match result {
            Ok((new_entry, r)) => {
                report.rows.push(ReportRow {
                    slide_id: entry.slide_id.clone(),
                    instances: r.bag.source_instances(),
                    k,
                    inertia: r.inertia,
                    iterations: r.iterations,
                    flag: if r.padded { "padded" } else { "ok" }.into(),
                });
                reduced_manifest.entries.push(new_entry);
            }
            Err(e) => report.rows.push(ReportRow {
                slide_id: entry.slide_id.clone(),
                instances: 0,
                k,
                inertia: 0.0,
                iterations: 0,
                flag: format!("error: {e}"),
            }),
        }
    }
    let report_path = out.join("report.csv");
    fs::write(&report_path, report.to_csv()).map_err(|e| Error::io(&report_path, e))?;
    if report.failures() == report.rows.len() {
        return Err(Error::Data(format!(
            "all {} bags failed to reduce; see {}",
            report.rows.len(),
            report_path.display()
        )));
    }
    reduced_manifest.write(out.join("manifest.tsv"))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{gen_synthetic, load_prototype_bags, SyntheticSpec};

    fn bag(rows: &[[f64; 2]]) -> EmbeddingBag {
        let m = Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
        EmbeddingBag::new("b", 0, 0, m).unwrap()
    }

    #[test]
    fn identical_rows_collapse() {
        let b = bag(&[[2.0, -1.0]; 6]);
        let r = reduce_bag(&b, 3, 9, &KMeansOptions::default()).unwrap();
        for row in r.bag.prototypes.row_iter() {
            assert_eq!(row, &[2.0, -1.0]);
        }
        assert_eq!(r.bag.source_instances(), 6);
    }

    #[test]
    fn square_example_is_size_then_norm_ordered() {
        let b = bag(&[[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]]);
        let r = reduce_bag(&b, 2, 1, &KMeansOptions::default()).unwrap();
        assert_eq!(r.bag.prototypes.data(), &[0.0, 0.5, 10.0, 0.5]);
        assert_eq!(r.bag.cluster_sizes, vec![2, 2]);
    }

    #[test]
    fn reduction_is_deterministic() {
        let mut rng = seed::rng(1);
        let m = Matrix::<f64>::from_fn(40, 5, |_, _| rand::Rng::gen_range(&mut rng, -1.0..1.0));
        let b = EmbeddingBag::new("slide_x", 1, 3, m).unwrap();
        let a = reduce_bag(&b, 4, 77, &KMeansOptions::default()).unwrap();
        let c = reduce_bag(&b, 4, 77, &KMeansOptions::default()).unwrap();
        assert_eq!(a.bag, c.bag);
        for (x, y) in a.bag.prototypes.data().iter().zip(c.bag.prototypes.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn tiny_bag_is_padded_cyclically() {
        let b = bag(&[[0.0, 0.0], [5.0, 5.0], [5.0, 5.0]]);
        let r = reduce_bag(&b, 5, 0, &KMeansOptions::default()).unwrap();
        assert!(r.padded);
        assert_eq!(r.bag.k(), 5);
        // k' = 3 clusters over 2 distinct points: one duplicate centroid
        let p = &r.bag.prototypes;
        for row in 3..5 {
            assert_eq!(p.row(row), p.row(row - 3));
        }
        assert_eq!(r.bag.cluster_sizes[3..], [0, 0]);
        assert_eq!(r.bag.source_instances(), 3);
    }

    #[test]
    fn dataset_reduction_writes_files_and_report() {
        let src = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            num_bags: 3,
            num_domains: 3,
            dim: 4,
            min_patches: 10,
            max_patches: 20,
            ..Default::default()
        };
        let (manifest, _) = gen_synthetic(&spec, src.path()).unwrap();
        let out = tempfile::tempdir().unwrap();
        let report =
            reduce_dataset(&manifest, 5, 3, &KMeansOptions::default(), out.path()).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert!(report
            .rows
            .iter()
            .all(|r| r.inertia >= 0.0 && r.flag == "ok"));
        let reduced = Manifest::read(out.path().join("manifest.tsv")).unwrap();
        let bags = load_prototype_bags(&reduced).unwrap();
        assert_eq!(bags.len(), 3);
        assert!(bags.iter().all(|b| b.prototypes.shape() == (5, 4)));

        let again = tempfile::tempdir().unwrap();
        reduce_dataset(&manifest, 5, 3, &KMeansOptions::default(), again.path()).unwrap();
        for e in &reduced.entries {
            assert_eq!(
                fs::read(out.path().join(&e.path)).unwrap(),
                fs::read(again.path().join(&e.path)).unwrap()
            );
        }
        assert_eq!(
            fs::read(out.path().join("report.csv")).unwrap(),
            fs::read(again.path().join("report.csv")).unwrap()
        );
    }

    #[test]
    fn empty_manifest_and_all_failures() {
        let out = tempfile::tempdir().unwrap();
        let m = Manifest::new("x", 1, out.path());
        let err = reduce_dataset(&m, 2, 0, &KMeansOptions::default(), out.path()).unwrap_err();
        assert!(err.to_string().contains("no bags"));

        let mut m = Manifest::new("x", 1, out.path());
        m.entries.push(ManifestEntry {
            slide_id: "ghost".into(),
            class_label: 0,
            domain_id: 0,
            path: "missing.pmb".into(),
        });
        assert!(reduce_dataset(&m, 2, 0, &KMeansOptions::default(), out.path()).is_err());
        let csv = fs::read_to_string(out.path().join("report.csv")).unwrap();
        assert!(csv.contains("ghost") && csv.contains("error"));
    }
}
