use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gpmap::config::{Config, StageSeeds};
use gpmap::{Error, Result};
use serde::{Deserialize, Serialize};

/// Provenance record written next to every command's artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Config,
    pub seeds: StageSeeds,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Crate name to version.
    pub versions: BTreeMap<String, String>,
    /// Wall time per stage (s).
    pub stage_wall_s: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, config: &Config) -> Self {
        let versions = [
            ("gpmap".to_string(), gpmap::VERSION.to_string()),
            (env!("CARGO_PKG_NAME").to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ]
        .into_iter()
        .collect();
        Self {
            command: command.to_string(),
            config: config.clone(),
            seeds: config.stage_seeds(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            versions,
            stage_wall_s: BTreeMap::new(),
        }
    }

    /// Runs `f` and records its wall time under `stage`.
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let out = f();
        *self.stage_wall_s.entry(stage.to_string()).or_default() += t0.elapsed().as_secs_f64();
        out
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    #[cfg(test)]
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            kind: "manifest",
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}
