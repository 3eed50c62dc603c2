//! Run manifests and timing records, written as JSON next to the results.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use kmc::config::TrackerConfig;
use serde::Serialize;

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    /// Every tracker setting, including defaults.
    pub config: BTreeMap<String, String>,
    /// Where the decoder came from: off, a weights file, or seeded training.
    pub decoder: String,
    pub started_unix: u64,
    pub extra: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, input: Option<&Path>, out: &Path) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            argv: std::env::args().collect(),
            seed,
            input: input.map(Path::to_path_buf),
            out: out.to_path_buf(),
            config: BTreeMap::new(),
            decoder: "off".into(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            extra: BTreeMap::new(),
        }
    }

    pub fn with_config(mut self, cfg: &TrackerConfig) -> Self {
        self.config = cfg
            .to_config_string()
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        self
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.extra.insert(key.into(), value.to_string());
    }

    /// Creates `out` and writes the manifest into it.
    pub fn write(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out)?;
        write_json(&self.out.join(MANIFEST_FILE), self)
    }
}

#[derive(Debug, Serialize)]
pub struct SequenceTiming {
    pub name: String,
    pub frames: usize,
    pub seconds: f64,
    pub fps: f64,
}

#[derive(Debug, Serialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub sequences: Vec<SequenceTiming>,
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Run(kmc::KmcError::Format(e.to_string())))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
