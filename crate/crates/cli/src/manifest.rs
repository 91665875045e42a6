use std::fs;
use std::path::{Path, PathBuf};

use hypersolid::config::{RunConfig, KEYS};
use hypersolid::Result;
use serde::Serialize;

/// Record of one invocation. Written before any long computation so an
/// interrupted run still documents what it was doing.
#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub threads: Option<usize>,
    pub tool_version: &'static str,
    pub config: serde_json::Map<String, serde_json::Value>,
    pub inputs: Vec<PathBuf>,
    pub artifacts: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &RunConfig, threads: Option<usize>) -> Self {
        let config = KEYS
            .iter()
            .map(|k| {
                let v = cfg.get(k).expect("listed key");
                (k.to_string(), serde_json::Value::String(v))
            })
            .collect();
        Self {
            command: command.to_string(),
            seed: cfg.seed,
            threads,
            tool_version: env!("CARGO_PKG_VERSION"),
            config,
            inputs: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    /// Writes `manifest.json` and `config.resolved` into `dir`.
    pub fn write(&self, dir: &Path, cfg: &RunConfig) -> Result<()> {
        fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(dir.join("manifest.json"), json + "\n")?;
        fs::write(dir.join("config.resolved"), cfg.to_text())?;
        Ok(())
    }
}
