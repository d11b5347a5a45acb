use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use pixlm::Settings;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Record of one invocation, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub tool_version: String,
    pub config: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    /// Input path to hex SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    /// Starts a record holding every resolved setting.
    pub fn start(command: &str, settings: &Settings) -> Self {
        Self {
            command: command.to_string(),
            argv: std::env::args().collect(),
            tool_version: format!("pixlm {}", env!("CARGO_PKG_VERSION")),
            config: settings.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            seeds: Vec::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            started_unix: now(),
            finished_unix: 0,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = file_digest(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn config<'a>(&mut self, entries: impl IntoIterator<Item = (&'a str, &'a str)>) {
        for (k, v) in entries {
            self.config.insert(k.to_string(), v.to_string());
        }
    }

    /// Writes `manifest.json` into `dir`, or `<file>.manifest.json` beside a
    /// single output file.
    pub fn finish(mut self, location: &Path) -> Result<PathBuf> {
        self.finished_unix = now();
        let path = if location.is_dir() {
            location.join("manifest.json")
        } else {
            let mut name = location.file_name().map(|n| n.to_os_string()).unwrap_or_default();
            name.push(".manifest.json");
            location.with_file_name(name)
        };
        let json = serde_json::to_string_pretty(&self)?;
        std::fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
