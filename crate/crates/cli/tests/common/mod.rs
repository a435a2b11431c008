//! Helpers shared by the CLI tests and the acceptance suite.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dino4d_cli::config::HarnessConfig;
use dino4d_core::diffusion::DenoiserConfig;
use dino4d_core::fusion::AdapterConfig;
use dino4d_core::scene::{SceneConfig, SuiteConfig};
use dino4d_core::train::{ModelConfig, TrainConfig};
use serde_json::Value;

pub const SCHEMA: &str = include_str!("../../schema/eval_report.schema.json");

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dino4d")
}

/// Runs the binary in `cwd` with logging limited to errors.
pub fn run_in(cwd: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(cwd)
        .env("DINO4D_LOG", "error")
        .output()
        .expect("spawn dino4d")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Schema violations of an evaluation report, empty when valid.
pub fn schema_errors(report: &Value) -> Vec<String> {
    let schema: Value = serde_json::from_str(SCHEMA).unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).expect("schema compiles");
    let result = compiled.validate(report);
    match result {
        Ok(()) => Vec::new(),
        Err(errors) => errors.map(|e| format!("{} at {}", e, e.instance_path)).collect(),
    }
}

/// A config small enough that gen, train and eval take seconds.
pub fn small_config() -> HarnessConfig {
    let mut model = ModelConfig::default();
    model.predictor.hidden = 12;
    model.predictor.d_geo = 6;
    model.adapter = AdapterConfig {
        d_geo: 6,
        d_sem: 8,
        d_k: 4,
        d_v: 4,
    };
    model.features.dim = 8;
    model.denoiser = DenoiserConfig {
        hidden: 8,
        time_dim: 4,
        feature_dim: 6,
    };
    HarnessConfig {
        suite: SuiteConfig {
            num_scenes: 2,
            seed: 5,
            scene: SceneConfig {
                width: 28,
                height: 28,
                frames: 6,
                num_objects: 1,
                ..SceneConfig::default()
            },
        },
        train: TrainConfig {
            steps: 3,
            window: 3,
            model,
            semantic_stride: 3,
            diffusion_pixels: 64,
            checkpoint_every: 2,
            ..TrainConfig::default()
        },
        ..HarnessConfig::default()
    }
}

pub fn write_config(dir: &Path, cfg: &HarnessConfig) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

/// Every file under `dir` with its bytes, sorted by relative path.
pub fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
