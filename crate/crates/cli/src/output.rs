use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const SUBDIRS: [&str; 5] = ["dataset", "models", "trajectories", "metrics", "logs"];

/// `out/<run-id>/{dataset,models,trajectories,metrics,logs}`.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
    pub config_hash: String,
    pub git: String,
    written: Vec<FileEntry>,
}

#[derive(Debug, Clone, Serialize)]
struct FileEntry {
    path: String,
    seed: Option<u64>,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    run_id: String,
    config_hash: &'a str,
    git_describe: &'a str,
    seeds: &'a [u64],
    config: &'a ExperimentConfig,
    files: &'a [FileEntry],
}

pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

impl RunDir {
    pub fn create(config: &ExperimentConfig) -> Result<Self> {
        let root = config.output.dir.join(config.run_id());
        for sub in SUBDIRS {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(RunDir {
            root,
            config_hash: config.hash(),
            git: git_describe(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, sub: &str, name: &str) -> PathBuf {
        self.root.join(sub).join(name)
    }

    /// Writes through `fill`, then records the file's hash and seed.
    pub fn write<F>(&mut self, sub: &str, name: &str, seed: Option<u64>, fill: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut dyn Write) -> Result<()>,
    {
        let path = self.path(sub, name);
        let file = File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        let mut w = BufWriter::new(file);
        fill(&mut w)?;
        w.flush()?;
        drop(w);
        self.record(&path, seed)?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, sub: &str, name: &str, seed: Option<u64>, value: &T) -> Result<PathBuf> {
        self.write(sub, name, seed, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    pub fn record(&mut self, path: &Path, seed: Option<u64>) -> Result<()> {
        let bytes = fs::read(path)?;
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        self.written.push(FileEntry {
            path: rel.display().to_string(),
            seed,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    /// `logs/<command>.manifest.json`, listing every file this command wrote.
    pub fn finish(self, command: &str, config: &ExperimentConfig) -> Result<PathBuf> {
        let manifest = Manifest {
            command,
            run_id: config.run_id(),
            config_hash: &self.config_hash,
            git_describe: &self.git,
            seeds: &config.seeds,
            config,
            files: &self.written,
        };
        let path = self.path("logs", &format!("{command}.manifest.json"));
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text + "\n")?;
        Ok(path)
    }
}

pub fn dataset_name(seed: u64) -> String {
    format!("seed-{seed}.csv")
}

pub fn model_name(seed: u64) -> String {
    format!("seed-{seed}.json")
}
