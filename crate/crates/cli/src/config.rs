//! The harness config file: one JSON document shared by every subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use dino4d_core::scene::SuiteConfig;
use dino4d_core::train::{EvalConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    /// Master seed; when set it replaces the per-section seeds.
    pub seed: Option<u64>,
    /// Output directory; each subcommand has its own default.
    pub out: Option<PathBuf>,
    /// Directory of scene bundles written by `gen` and read by the others.
    pub scenes_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Also write PGM previews next to each bundle.
    pub write_pgm: bool,
    pub suite: SuiteConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

pub const DEFAULT_SCENES_DIR: &str = "scenes";

impl HarnessConfig {
    pub fn scenes_dir(&self) -> PathBuf {
        self.scenes_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_SCENES_DIR))
    }
}

/// Parses a config document. Syntax and schema errors are usage errors that
/// carry the line and column of the problem.
pub fn parse_config(text: &str, origin: &str) -> CliResult<HarnessConfig> {
    serde_json::from_str(text).map_err(|e| {
        CliError::Usage(format!(
            "config {origin}: line {}, column {}: {e}",
            e.line(),
            e.column()
        ))
    })
}

/// Loads the config at `path`, or the defaults when no path is given.
pub fn load_config(path: Option<&Path>) -> CliResult<HarnessConfig> {
    let Some(path) = path else {
        return Ok(HarnessConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text, &path.display().to_string())
}
