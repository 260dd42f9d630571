//! Synthetic multiple-instance corpora with known structure.
//!
//! Each bag mixes "signal" patches drawn around its class center with
//! background patches drawn around shared centers. Every patch of a bag is
//! shifted by its domain's offset and perturbed by isotropic noise. The true
//! centers and offsets are kept so tests can check recovery against them.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::bag::EmbeddingBag;
use crate::error::{Error, Result};
use crate::io::manifest::{Manifest, ManifestEntry};
use crate::io::matrix_io::write_matrix;
use crate::matrix::Matrix;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_bags: usize,
    pub num_classes: usize,
    /// `num_domains == num_bags` makes every slide its own domain.
    pub num_domains: usize,
    pub min_patches: usize,
    pub max_patches: usize,
    pub dim: usize,
    /// Share of a bag's patches carrying class signal, in `(0, 1]`.
    pub signal_fraction: f64,
    pub domain_shift_magnitude: f64,
    pub noise_sigma: f64,
    pub background_centers: usize,
    /// Standard deviation of the coordinates of the true centers.
    pub center_scale: f64,
    /// Probability that a bag's domain is `class % num_domains` instead of a
    /// uniform draw; ties domain to class.
    pub confounding: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_bags: 60,
            num_classes: 3,
            num_domains: 60,
            min_patches: 40,
            max_patches: 80,
            dim: 64,
            signal_fraction: 0.3,
            domain_shift_magnitude: 0.0,
            noise_sigma: 0.1,
            background_centers: 3,
            center_scale: 1.0,
            confounding: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_bags == 0 || self.num_classes == 0 || self.num_domains == 0 || self.dim == 0 {
            return bad("bags, classes, domains and dim must be at least 1".into());
        }
        if self.num_domains > self.num_bags {
            return bad(format!(
                "num_domains ({}) exceeds num_bags ({})",
                self.num_domains, self.num_bags
            ));
        }
        if self.min_patches == 0 || self.min_patches > self.max_patches {
            return bad(format!(
                "patch range [{}, {}] is empty",
                self.min_patches, self.max_patches
            ));
        }
        if !(self.signal_fraction > 0.0 && self.signal_fraction <= 1.0) {
            return bad(format!(
                "signal_fraction {} outside (0, 1]",
                self.signal_fraction
            ));
        }
        if self.signal_fraction < 1.0 && self.background_centers == 0 {
            return bad("background patches requested but no background centers".into());
        }
        if !(0.0..=1.0).contains(&self.confounding) {
            return bad(format!("confounding {} outside [0, 1]", self.confounding));
        }
        if self.noise_sigma < 0.0 || self.domain_shift_magnitude < 0.0 || self.center_scale < 0.0 {
            return bad("noise, shift and center scale must be non-negative".into());
        }
        Ok(())
    }
}

/// Generator parameters, stored next to the corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub class_centers: Matrix,
    pub background_centers: Matrix,
    /// Unit directions; a bag's shift is `magnitude * offset[domain]`.
    pub domain_offsets: Matrix,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub spec: SyntheticSpec,
    pub bags: Vec<EmbeddingBag>,
    pub truth: GroundTruth,
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut seed::Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

/// Builds the corpus in memory.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let n = spec.dim;
    let class_centers = gaussian_matrix(spec.num_classes, n, spec.center_scale, &mut rng);
    let background = gaussian_matrix(spec.background_centers, n, spec.center_scale, &mut rng);
    let mut offsets = gaussian_matrix(spec.num_domains, n, 1.0, &mut rng);
    for r in 0..offsets.rows() {
        let norm = offsets.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            offsets.row_mut(r).iter_mut().for_each(|v| *v /= norm);
        }
    }

    let mut bags = Vec::with_capacity(spec.num_bags);
    for i in 0..spec.num_bags {
        let class = i % spec.num_classes;
        let domain = if spec.num_domains == spec.num_bags {
            i
        } else if rng.gen::<f64>() < spec.confounding {
            class % spec.num_domains
        } else {
            rng.gen_range(0..spec.num_domains)
        };
        let k = rng.gen_range(spec.min_patches..=spec.max_patches);
        let signal = ((spec.signal_fraction * k as f64).round() as usize).clamp(1, k);
        let mut features = Matrix::zeros(k, n);
        for p in 0..k {
            let center = if p < signal {
                class_centers.row(class)
            } else {
                background.row(rng.gen_range(0..spec.background_centers))
            };
            let shift = offsets.row(domain);
            for (c, v) in features.row_mut(p).iter_mut().enumerate() {
                let noise = if spec.noise_sigma > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    spec.noise_sigma * z
                } else {
                    0.0
                };
                *v = center[c] + spec.domain_shift_magnitude * shift[c] + noise;
            }
        }
        bags.push(EmbeddingBag::new(
            format!("slide_{i:04}"),
            class,
            domain,
            features,
        )?);
    }

    Ok(SyntheticCorpus {
        spec: spec.clone(),
        bags,
        truth: GroundTruth {
            class_centers,
            background_centers: background,
            domain_offsets: offsets,
        },
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

impl SyntheticCorpus {
    /// Writes `manifest.tsv`, `bags/*.pmb` and the `truth/` sidecar.
    pub fn write(&self, out_dir: impl AsRef<Path>) -> Result<Manifest> {
        let out = out_dir.as_ref();
        create_dir(&out.join("bags"))?;
        create_dir(&out.join("truth"))?;
        let mut manifest = Manifest::new("synthetic", self.spec.num_classes, out);
        for bag in &self.bags {
            let rel = PathBuf::from("bags").join(format!("{}.pmb", bag.slide_id));
            write_matrix(&bag.features, out.join(&rel))?;
            manifest.entries.push(ManifestEntry {
                slide_id: bag.slide_id.clone(),
                class_label: bag.class_label,
                domain_id: bag.domain_id,
                path: rel,
            });
        }
        manifest.write(out.join("manifest.tsv"))?;

        let truth = out.join("truth");
        write_matrix(&self.truth.class_centers, truth.join("class_centers.pmb"))?;
        write_matrix(
            &self.truth.background_centers,
            truth.join("background_centers.pmb"),
        )?;
        write_matrix(&self.truth.domain_offsets, truth.join("domain_offsets.pmb"))?;
        let s = &self.spec;
        let mut index = String::new();
        let _ = writeln!(
            index,
            "class_centers\tclass_centers.pmb\t{}x{}",
            s.num_classes, s.dim
        );
        let _ = writeln!(
            index,
            "background_centers\tbackground_centers.pmb\t{}x{}",
            s.background_centers, s.dim
        );
        let _ = writeln!(
            index,
            "domain_offsets\tdomain_offsets.pmb\t{}x{}",
            s.num_domains, s.dim
        );
        let _ = writeln!(
            index,
            "domain_shift_magnitude\t{}",
            s.domain_shift_magnitude
        );
        let _ = writeln!(index, "noise_sigma\t{}", s.noise_sigma);
        let _ = writeln!(index, "signal_fraction\t{}", s.signal_fraction);
        let _ = writeln!(index, "confounding\t{}", s.confounding);
        let _ = writeln!(index, "seed\t{}", s.seed);
        let path = truth.join("index.txt");
        fs::write(&path, index).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

/// Generates a corpus and writes it under `out_dir`.
pub fn gen_synthetic(
    spec: &SyntheticSpec,
    out_dir: impl AsRef<Path>,
) -> Result<(Manifest, GroundTruth)> {
    let corpus = generate(spec)?;
    let manifest = corpus.write(out_dir)?;
    Ok((manifest, corpus.truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::dataset::load_dataset;
    use crate::matrix::sq_dist;

    #[test]
    fn noiseless_bags_sit_on_their_class_center() {
        let spec = SyntheticSpec {
            num_bags: 12,
            num_domains: 12,
            signal_fraction: 1.0,
            noise_sigma: 0.0,
            domain_shift_magnitude: 0.0,
            dim: 8,
            ..Default::default()
        };
        let c = generate(&spec).unwrap();
        for bag in &c.bags {
            for row in bag.features.row_iter() {
                let nearest = (0..spec.num_classes)
                    .min_by(|&a, &b| {
                        sq_dist(row, c.truth.class_centers.row(a))
                            .total_cmp(&sq_dist(row, c.truth.class_centers.row(b)))
                    })
                    .unwrap();
                assert_eq!(nearest, bag.class_label);
                assert_eq!(row, c.truth.class_centers.row(bag.class_label));
            }
        }
    }

    #[test]
    fn fifty_bags_written_and_reloaded() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            num_bags: 50,
            num_domains: 50,
            dim: 4,
            min_patches: 3,
            max_patches: 6,
            ..Default::default()
        };
        let (manifest, _) = gen_synthetic(&spec, dir.path()).unwrap();
        assert_eq!(manifest.entries.len(), 50);
        assert_eq!(fs::read_dir(dir.path().join("bags")).unwrap().count(), 50);
        let ds = load_dataset(dir.path().join("manifest.tsv")).unwrap();
        assert_eq!(ds.bags.len(), 50);
        assert!(dir.path().join("truth/index.txt").is_file());
    }

    #[test]
    fn same_spec_gives_identical_bytes() {
        let spec = SyntheticSpec {
            num_bags: 6,
            num_domains: 2,
            dim: 5,
            min_patches: 4,
            max_patches: 9,
            domain_shift_magnitude: 1.5,
            confounding: 0.5,
            seed: 42,
            ..Default::default()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        gen_synthetic(&spec, a.path()).unwrap();
        gen_synthetic(&spec, b.path()).unwrap();
        for i in 0..6 {
            let name = format!("bags/slide_{i:04}.pmb");
            assert_eq!(
                fs::read(a.path().join(&name)).unwrap(),
                fs::read(b.path().join(&name)).unwrap()
            );
        }
        let strip = |p: &Path| {
            fs::read_to_string(p.join("manifest.tsv"))
                .unwrap()
                .lines()
                .skip(1)
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(strip(a.path()), strip(b.path()));
    }

    #[test]
    fn full_confounding_ties_domain_to_class() {
        let spec = SyntheticSpec {
            num_bags: 20,
            num_classes: 2,
            num_domains: 2,
            confounding: 1.0,
            dim: 3,
            ..Default::default()
        };
        let c = generate(&spec).unwrap();
        assert!(c.bags.iter().all(|b| b.domain_id == b.class_label));
    }

    #[test]
    fn invalid_specs_rejected() {
        let base = SyntheticSpec::default();
        for spec in [
            SyntheticSpec {
                num_domains: 61,
                ..base.clone()
            },
            SyntheticSpec {
                signal_fraction: 0.0,
                ..base.clone()
            },
            SyntheticSpec {
                min_patches: 9,
                max_patches: 3,
                ..base.clone()
            },
            SyntheticSpec {
                num_bags: 0,
                ..base.clone()
            },
        ] {
            assert!(generate(&spec).is_err());
        }
    }
}
