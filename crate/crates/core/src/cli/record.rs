use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub started_unix: u64,
    pub elapsed_seconds: f64,
    pub files: Vec<FileEntry>,
    /// fitted constants and other scalar results by name
    pub constants: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Output directory of one invocation; tracks every file written.
pub struct RunDir {
    root: PathBuf,
    command: String,
    config: ExperimentConfig,
    started: Instant,
    started_unix: u64,
    files: Vec<FileEntry>,
    pub constants: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl RunDir {
    pub fn create(command: &str, config: &ExperimentConfig) -> Result<Self> {
        std::fs::create_dir_all(&config.out)?;
        let mut dir = RunDir {
            root: config.out.clone(),
            command: command.to_string(),
            config: config.clone(),
            started: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            files: Vec::new(),
            constants: BTreeMap::new(),
            notes: Vec::new(),
        };
        dir.write("config.toml", &config.to_toml())?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        std::fs::write(self.root.join(name), contents)?;
        self.files.retain(|f| f.name != name);
        self.files.push(FileEntry {
            name: name.to_string(),
            sha256: sha256_hex(contents.as_bytes()),
            bytes: contents.len(),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::NumericFailure(e.to_string()))?;
        self.write(name, &(text + "\n"))
    }

    pub fn constant(&mut self, name: impl Into<String>, v: f64) {
        self.constants.insert(name.into(), v);
    }

    /// Writes record.json and returns the record.
    pub fn finish(self) -> Result<RunRecord> {
        let record = RunRecord {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.config.seed,
            config: self.config,
            started_unix: self.started_unix,
            elapsed_seconds: self.started.elapsed().as_secs_f64(),
            files: self.files,
            constants: self.constants,
            notes: self.notes,
        };
        let text = serde_json::to_string_pretty(&record)
            .map_err(|e| Error::NumericFailure(e.to_string()))?;
        std::fs::write(self.root.join("record.json"), text + "\n")?;
        Ok(record)
    }
}

/// Checks that every manifest entry of `dir/record.json` exists with a matching
/// checksum; returns the names of the offending files.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(dir.join("record.json"))?;
    let record: RunRecord = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("bad record.json: {e}")))?;
    let mut bad = Vec::new();
    for f in &record.files {
        match std::fs::read(dir.join(&f.name)) {
            Ok(bytes) if sha256_hex(&bytes) == f.sha256 => {}
            _ => bad.push(f.name.clone()),
        }
    }
    Ok(bad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_detects_tampering() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            out: tmp.path().join("r"),
            ..ExperimentConfig::default()
        };
        let mut dir = RunDir::create("basis", &cfg).unwrap();
        dir.write("a.csv", "x\n1\n").unwrap();
        let rec = dir.finish().unwrap();
        assert_eq!(rec.files.len(), 2);
        assert!(verify_manifest(&cfg.out).unwrap().is_empty());
        std::fs::write(cfg.out.join("a.csv"), "x\n2\n").unwrap();
        assert_eq!(
            verify_manifest(&cfg.out).unwrap(),
            vec!["a.csv".to_string()]
        );
    }
}
