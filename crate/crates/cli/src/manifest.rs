use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use adsiam::config::Config;
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one invocation, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Arguments after the program name; replaying them reruns the command.
    pub argv: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub inputs: Vec<PathBuf>,
    pub output: PathBuf,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub config: Option<Config>,
}

impl RunManifest {
    pub fn new(subcommand: &str, argv: &[String], output: &Path) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            argv: argv.to_vec(),
            config_path: None,
            seeds: Vec::new(),
            inputs: Vec::new(),
            output: output.to_path_buf(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            config: None,
        }
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
