//! Output files and the run manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// CSV table with a fixed header; floats use the shortest round-trip form.
#[derive(Debug, Clone)]
pub struct Csv {
    text: String,
    columns: usize,
    rows: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self {
            text: format!("{}\n", header.join(",")),
            columns: header.len(),
            rows: 0,
        }
    }

    pub fn row(&mut self, cells: &[String]) {
        assert_eq!(cells.len(), self.columns, "CSV row width");
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
        self.rows += 1;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

#[macro_export]
macro_rules! cells {
    ($($x:expr),* $(,)?) => { [$($x.to_string()),*] };
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
    /// Data rows for CSV files, `null` otherwise.
    pub rows: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub kind: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub threads: usize,
    pub outputs: Vec<OutputEntry>,
    pub started_unix: f64,
    pub wall_seconds: f64,
}

/// Collects outputs in memory and writes them, manifest last.
pub struct RunDir {
    dir: PathBuf,
    entries: Vec<OutputEntry>,
    started: Instant,
    started_unix: f64,
}

impl RunDir {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let stale = dir.join(MANIFEST);
        if stale.exists() {
            std::fs::remove_file(&stale).map_err(|e| CliError::io(&stale, e))?;
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            entries: Vec::new(),
            started: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0.0, |d| d.as_secs_f64()),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    fn write(&mut self, name: &str, bytes: &[u8], rows: Option<usize>) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.entries.push(OutputEntry {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
            rows,
        });
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, csv: &Csv) -> Result<()> {
        self.write(name, csv.as_str().as_bytes(), Some(csv.rows()))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable output");
        text.push('\n');
        self.write(name, text.as_bytes(), None)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        self.write(name, text.as_bytes(), None)
    }

    pub fn finish(self, kind: &str, config_text: &str, seed: u64, threads: usize) -> Result<RunManifest> {
        let manifest = RunManifest {
            kind: kind.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: sha256_hex(config_text.as_bytes()),
            seed,
            threads,
            outputs: self.entries,
            started_unix: self.started_unix,
            wall_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = self.dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("serializable manifest") + "\n";
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}
