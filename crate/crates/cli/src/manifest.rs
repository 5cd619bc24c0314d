//! `manifest.json`: what produced an output directory and what is in it.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Subcommand that created the directory.
    pub command: String,
    pub config: serde_json::Value,
    pub source_revision: String,
    pub crate_version: String,
    pub seed: u64,
    pub started_unix: f64,
    pub finished_unix: f64,
    /// File names relative to the directory, excluding the manifest.
    pub outputs: Vec<String>,
}

pub fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: u64, started_unix: f64) -> Self {
        Self {
            command: command.to_string(),
            config,
            source_revision: env!("DDCL_SOURCE_REV").to_string(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            started_unix,
            finished_unix: started_unix,
            outputs: Vec::new(),
        }
    }

    pub fn add_output(&mut self, name: &str) {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
    }

    /// Stamps the finish time and writes the manifest into `dir`,
    /// replacing any previous one.
    pub fn write(mut self, dir: &Path) -> Result<()> {
        self.finished_unix = now_unix();
        let path = dir.join(FILE_NAME);
        fs::write(&path, serde_json::to_string_pretty(&self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(FILE_NAME);
        let text =
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
