//! The `record.txt` written into every run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use protomixer::io::Manifest;
use protomixer::model::MixerConfig;
use protomixer::train::TrainConfig;
use sha2::{Digest, Sha256};

pub struct RunRecord {
    command_line: Vec<String>,
    config: Vec<(String, String)>,
    seed: Option<u64>,
    started: u64,
    inputs: Vec<PathBuf>,
    artifacts: Vec<PathBuf>,
    notes: Vec<(String, String)>,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl RunRecord {
    pub fn new(command_line: Vec<String>) -> Self {
        Self {
            command_line,
            config: Vec::new(),
            seed: None,
            started: unix_now(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.push((key.to_string(), value.to_string()));
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn mixer(&mut self, c: &MixerConfig) {
        self.set("tokens", c.tokens);
        self.set("channels", c.channels);
        self.set("token_hidden", c.token_hidden);
        self.set("channel_hidden", c.channel_hidden);
        self.set("blocks", c.blocks);
        self.set("num_classes", c.num_classes);
        self.set("domain_hidden", c.domain_hidden);
        self.set("final_norm", c.final_norm);
    }

    pub fn train(&mut self, c: &TrainConfig) {
        self.set("epochs", c.epochs);
        self.set("batch_size", c.batch_size);
        self.set("optimizer", c.optimizer);
        self.set("learning_rate", c.learning_rate);
        self.set("beta1", c.beta1);
        self.set("beta2", c.beta2);
        self.set("adam_eps", c.adam_eps);
        self.set("momentum", c.momentum);
        self.set("alpha", c.alpha);
        self.set("lambda_offset", c.lambda_offset);
        self.set(
            "fixed_lambda",
            c.fixed_lambda.map_or("none".into(), |l| l.to_string()),
        );
        self.set("folds", c.folds);
        self.set("repeats", c.repeats);
        self.set(
            "fold_limit",
            c.fold_limit.map_or("none".into(), |l| l.to_string()),
        );
        self.set("dropout_rate", c.dropout_rate);
        self.set("domain_source", c.domain_source);
        self.seed(c.seed);
    }

    /// Adds the manifest and every file it lists to the input hash.
    pub fn input_manifest(&mut self, path: &Path, manifest: &Manifest) {
        self.inputs.push(path.to_path_buf());
        for e in &manifest.entries {
            self.inputs.push(manifest.resolve(e));
        }
    }

    pub fn input_file(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn artifact(&mut self, path: &Path) {
        self.artifacts.push(path.to_path_buf());
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.push((key.to_string(), value.to_string()));
    }

    /// SHA-256 over the input files' contents, in order, each prefixed by
    /// its length.
    pub fn input_hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        for p in &self.inputs {
            let bytes = fs::read(p).with_context(|| format!("hashing {}", p.display()))?;
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
        Ok(format!("{:x}", h.finalize()))
    }

    pub fn write(&self, run_dir: &Path) -> Result<PathBuf> {
        let mut s = String::new();
        writeln!(s, "command = {}", self.command_line.join(" "))?;
        if let Some(seed) = self.seed {
            writeln!(s, "seed = {seed}")?;
        }
        writeln!(s, "started_unix = {}", self.started)?;
        writeln!(s, "finished_unix = {}", unix_now())?;
        writeln!(s, "input_sha256 = {}", self.input_hash()?)?;
        for p in &self.inputs {
            writeln!(s, "input = {}", p.display())?;
        }
        writeln!(s, "[config]")?;
        for (k, v) in &self.config {
            writeln!(s, "{k} = {v}")?;
        }
        if !self.notes.is_empty() {
            writeln!(s, "[results]")?;
            for (k, v) in &self.notes {
                writeln!(s, "{k} = {v}")?;
            }
        }
        writeln!(s, "[artifacts]")?;
        for a in &self.artifacts {
            writeln!(s, "{}", a.display())?;
        }
        let path = run_dir.join("record.txt");
        fs::write(&path, s).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
