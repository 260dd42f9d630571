//! Dataset listings.
//!
//! ```text
//! # dataset_name=toy
//! # num_classes=3
//! slide_id    class_label    domain_id    path
//! slide_0000    0    0    bags/slide_0000.pmb
//! ```
//!
//! `#` lines carry `key=value` metadata, the first other line is the column
//! header, and every following line is one tab-separated entry. Relative
//! paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "slide_id\tclass_label\tdomain_id\tpath";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub slide_id: String,
    pub class_label: usize,
    pub domain_id: usize,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub dataset_name: String,
    pub num_classes: usize,
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(
        dataset_name: impl Into<String>,
        num_classes: usize,
        base_dir: impl Into<PathBuf>,
    ) -> Self {
        Self {
            dataset_name: dataset_name.into(),
            num_classes,
            entries: Vec::new(),
            base_dir: base_dir.into(),
        }
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    /// Checks unique slide ids and in-range class labels.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.slide_id.as_str()) {
                return Err(Error::Data(format!(
                    "duplicate slide_id `{}` in manifest",
                    e.slide_id
                )));
            }
            if e.class_label >= self.num_classes {
                return Err(Error::Data(format!(
                    "slide `{}` has class_label {} but num_classes is {}",
                    e.slide_id, e.class_label, self.num_classes
                )));
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.class_label).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# dataset_name={}", self.dataset_name);
        let _ = writeln!(s, "# num_classes={}", self.num_classes);
        let _ = writeln!(s, "{MANIFEST_HEADER}");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}",
                e.slide_id,
                e.class_label,
                e.domain_id,
                e.path.display()
            );
        }
        s
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut manifest = Manifest::new("", 0, base_dir);
        let mut num_classes = None;
        let mut saw_header = false;
        for (lineno, line) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((key, value)) = meta.trim().split_once('=') {
                    match key.trim() {
                        "dataset_name" => manifest.dataset_name = value.trim().to_string(),
                        "num_classes" => {
                            num_classes = Some(parse_count(value.trim(), lineno, "num_classes")?)
                        }
                        _ => {}
                    }
                }
                continue;
            }
            if !saw_header {
                if line != MANIFEST_HEADER {
                    return Err(Error::Data(format!(
                        "manifest line {lineno}: expected header `{}`",
                        MANIFEST_HEADER.replace('\t', "\\t")
                    )));
                }
                saw_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::Data(format!(
                    "manifest line {lineno}: expected 4 tab-separated fields, found {}",
                    fields.len()
                )));
            }
            manifest.entries.push(ManifestEntry {
                slide_id: fields[0].to_string(),
                class_label: parse_count(fields[1], lineno, "class_label")?,
                domain_id: parse_count(fields[2], lineno, "domain_id")?,
                path: PathBuf::from(fields[3]),
            });
        }
        if !saw_header {
            return Err(Error::Data("manifest has no header line".into()));
        }
        manifest.num_classes = match num_classes {
            Some(n) => n,
            None => manifest
                .entries
                .iter()
                .map(|e| e.class_label + 1)
                .max()
                .unwrap_or(0),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn parse_count(s: &str, lineno: usize, what: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Data(format!("manifest line {lineno}: bad {what} `{s}`")))
}
