use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use ilvr_core::ScheduleConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, Context};
use crate::model::sha256_hex;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Relative to the run directory.
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to re-run a command bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// The command's arguments, input paths made absolute.
    pub config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    pub outputs: Vec<OutputFile>,
    pub duration_secs: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize) -> CliResult<Self> {
        Ok(Self {
            command: command.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            config: serde_json::to_value(config)?,
            seed: None,
            schedule: None,
            model_id: None,
            outputs: Vec::new(),
            duration_secs: 0.0,
        })
    }

    /// Hashes `paths` (all under `root`) into the output list.
    pub fn record_outputs(&mut self, root: &Path, paths: &[PathBuf]) -> CliResult<()> {
        for path in paths {
            let bytes = fs::read(path).context_with(|| format!("hashing {}", path.display()))?;
            let rel = path.strip_prefix(root).unwrap_or(path).to_path_buf();
            self.outputs.push(OutputFile {
                path: rel,
                sha256: sha256_hex(&bytes),
            });
        }
        Ok(())
    }

    pub fn finish(&mut self, elapsed: Duration) {
        self.duration_secs = elapsed.as_secs_f64();
    }

    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).context_with(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).context_with(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).context_with(|| format!("parsing manifest {}", path.display()))
    }

    /// Compares the outputs of a re-run in `dir` with the recorded hashes.
    pub fn verify(&self, dir: &Path) -> CliResult<()> {
        let mut mismatched = Vec::new();
        for out in &self.outputs {
            let path = dir.join(&out.path);
            match fs::read(&path) {
                Ok(bytes) if sha256_hex(&bytes) == out.sha256 => {}
                _ => mismatched.push(out.path.display().to_string()),
            }
        }
        if mismatched.is_empty() {
            Ok(())
        } else {
            Err(CliError::data(format!(
                "{} of {} outputs differ: {}",
                mismatched.len(),
                self.outputs.len(),
                mismatched.join(", ")
            )))
        }
    }
}
