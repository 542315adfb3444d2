use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Provenance record written next to every output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub library_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<String>,
}

/// Wall-clock seconds, or `SOURCE_DATE_EPOCH` when set so that manifests
/// are reproducible too.
pub fn now_unix() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok()) {
        return t;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Outputs {
    dir: PathBuf,
    command: String,
    config_hash: String,
    seed: Option<u64>,
    started: u64,
    written: Vec<String>,
}

impl Outputs {
    pub fn new(dir: &Path, command: &str, config_bytes: &[u8], seed: Option<u64>) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            config_hash: sha256_hex(config_bytes),
            seed,
            started: now_unix(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.path(name);
        let mut f = fs::File::create(&p).with_context(|| format!("writing {}", p.display()))?;
        f.write_all(bytes)?;
        self.written.push(name.to_string());
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        self.write_bytes(name, to_json(value)?.as_bytes())
    }

    /// Record a file produced by some other writer.
    pub fn record(&mut self, name: &str) {
        self.written.push(name.to_string());
    }

    pub fn finish(self) -> Result<()> {
        let manifest = RunManifest {
            command: self.command.clone(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            library_version: ezddc::VERSION.to_string(),
            started_unix: self.started,
            finished_unix: now_unix(),
            outputs: self.written.clone(),
        };
        let p = self.dir.join("manifest.json");
        fs::write(&p, to_json(&manifest)?).with_context(|| format!("writing {}", p.display()))?;
        Ok(())
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// `x_bin,value` rows, LF terminated.
pub fn value_csv(values: &[f64]) -> String {
    let mut s = String::from("x_bin,value\n");
    for (x, v) in values.iter().enumerate() {
        s.push_str(&format!("{x},{v}\n"));
    }
    s
}
