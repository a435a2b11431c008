//! Run manifests: what a command did, with which seeds, and what it wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    /// Effective configuration after flag and file overrides.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// Written files, relative to the output directory.
    pub artifacts: Vec<String>,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
}

pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn tool_version() -> String {
    format!("dino4d {}", env!("CARGO_PKG_VERSION"))
}

/// Collects a run's artifacts and writes the manifest once the command is done.
pub struct RunRecorder {
    out: PathBuf,
    manifest: RunManifest,
}

impl RunRecorder {
    pub fn start(command: &str, args: Vec<String>, out: &Path) -> CliResult<Self> {
        fs::create_dir_all(out)?;
        Ok(Self {
            out: out.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                args,
                config: serde_json::Value::Null,
                seeds: BTreeMap::new(),
                artifacts: Vec::new(),
                tool_version: tool_version(),
                started_at: timestamp(),
                finished_at: String::new(),
            },
        })
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    pub fn config<T: Serialize>(&mut self, config: &T) -> CliResult<()> {
        self.manifest.config = serde_json::to_value(config)?;
        Ok(())
    }

    pub fn seed(&mut self, stage: &str, seed: u64) {
        self.manifest.seeds.insert(stage.to_string(), seed);
    }

    /// Records a file written inside the output directory.
    pub fn artifact(&mut self, path: &Path) -> CliResult<()> {
        let rel = path
            .strip_prefix(&self.out)
            .map_err(|_| CliError::Runtime(format!("{} is outside {}", path.display(), self.out.display())))?;
        self.manifest.artifacts.push(rel.to_string_lossy().replace('\\', "/"));
        Ok(())
    }

    pub fn finish(mut self) -> CliResult<RunManifest> {
        self.manifest.finished_at = timestamp();
        for a in &self.manifest.artifacts {
            if !self.out.join(a).is_file() {
                return Err(CliError::Runtime(format!("artifact {a} is missing at the end of the run")));
            }
        }
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(self.out.join(RUN_MANIFEST), text + "\n")?;
        Ok(self.manifest)
    }
}
