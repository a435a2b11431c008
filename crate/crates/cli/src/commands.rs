//! The subcommands. Each resolves its settings (flag > config > default),
//! does its work inside the output directory and returns the run manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dino4d_core::geometry::{chamfer_distance, validate_thresholds, write_ascii_ply, Pointmap};
use dino4d_core::scene::{generate, read_bundle, write_bundle, SceneSample, MANIFEST_FILE};
use dino4d_core::train::{evaluate, infer_pair, infer_sequence, load_checkpoint, train, Model, LOG_FILE};
use log::info;
use serde::Serialize;
use serde_json::json;

use crate::args::{Common, EvalArgs, ExportArgs, GenArgs, RefineArgs, TrainArgs};
use crate::config::{load_config, HarnessConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{RunManifest, RunRecorder};
use crate::pointmap_io::{read_pointmap, write_pointmap};

pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "table.txt";
pub const REFINE_SUMMARY: &str = "summary.json";

pub const DEFAULT_TRAIN_OUT: &str = "runs/train";
pub const DEFAULT_EVAL_OUT: &str = "runs/eval";
pub const DEFAULT_REFINE_OUT: &str = "runs/refine";

fn out_dir(common: &Common, cfg: &HarnessConfig, default: PathBuf) -> PathBuf {
    common.out.clone().or_else(|| cfg.out.clone()).unwrap_or(default)
}

fn checkpoint_path(flag: &Option<PathBuf>, cfg: &HarnessConfig) -> CliResult<PathBuf> {
    flag.clone()
        .or_else(|| cfg.checkpoint.clone())
        .ok_or_else(|| CliError::Usage("no checkpoint: pass --checkpoint or set \"checkpoint\" in the config".into()))
}

fn scene_id(dir: &Path) -> String {
    dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// Bundle directories under `dir`, sorted by name.
pub fn list_scenes(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries =
        fs::read_dir(dir).map_err(|e| CliError::Runtime(format!("cannot read scenes directory {}: {e}", dir.display())))?;
    let mut dirs = Vec::new();
    for e in entries {
        let p = e?.path();
        if p.join(MANIFEST_FILE).is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::Runtime(format!("no scene bundles in {}", dir.display())));
    }
    Ok(dirs)
}

fn load_scene(dir: &Path) -> CliResult<SceneSample> {
    info!("loading scene {}", dir.display());
    read_bundle(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn load_scenes(dir: &Path) -> CliResult<Vec<(String, SceneSample)>> {
    list_scenes(dir)?
        .iter()
        .map(|d| Ok((scene_id(d), load_scene(d)?)))
        .collect()
}

fn load_model(path: &Path) -> CliResult<Model> {
    let (model, header) =
        load_checkpoint(path).map_err(|e| CliError::Runtime(format!("checkpoint {}: {e}", path.display())))?;
    info!("loaded checkpoint {} (step {})", path.display(), header.step);
    Ok(model)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn parse_thresholds(csv: &str) -> CliResult<Vec<f64>> {
    let values = csv
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(format!("--thresholds {csv:?}: {e}")))?;
    validate_thresholds(&values).map_err(|e| CliError::Usage(format!("--thresholds {csv:?}: {e}")))?;
    Ok(values)
}

pub fn gen(args: &GenArgs, argv: Vec<String>) -> CliResult<RunManifest> {
    let cfg = load_config(args.common.config.as_deref())?;
    let mut suite = cfg.suite.clone();
    if let Some(seed) = args.common.seed.or(cfg.seed) {
        suite.seed = seed;
    }
    if suite.num_scenes == 0 {
        return Err(CliError::Usage("suite.num_scenes must be positive".into()));
    }
    let configs = suite.scene_configs();
    for c in &configs {
        c.validate()?;
    }
    let out = out_dir(&args.common, &cfg, cfg.scenes_dir());
    let mut rec = RunRecorder::start("gen", argv, &out)?;
    rec.config(&json!({ "suite": suite, "write_pgm": cfg.write_pgm }))?;
    rec.seed("suite", suite.seed);
    for (i, c) in configs.iter().enumerate() {
        let name = format!("scene_{i:03}");
        rec.seed(&name, c.seed);
        let dir = out.join(&name);
        let manifest = write_bundle(&generate(c)?, &dir, cfg.write_pgm)?;
        for f in &manifest.files {
            rec.artifact(&dir.join(f))?;
        }
        rec.artifact(&dir.join(MANIFEST_FILE))?;
        info!("wrote {}", dir.display());
    }
    rec.finish()
}

pub fn train_cmd(args: &TrainArgs, argv: Vec<String>) -> CliResult<RunManifest> {
    let cfg = load_config(args.common.config.as_deref())?;
    let mut tc = cfg.train.clone();
    if let Some(seed) = args.common.seed.or(cfg.seed) {
        tc.seed = seed;
    }
    if let Some(steps) = args.steps {
        tc.steps = steps;
    }
    tc.validate()?;
    let scenes_dir = args.scenes.clone().unwrap_or_else(|| cfg.scenes_dir());
    let out = out_dir(&args.common, &cfg, PathBuf::from(DEFAULT_TRAIN_OUT));
    let scenes: Vec<SceneSample> = load_scenes(&scenes_dir)?.into_iter().map(|(_, s)| s).collect();
    let mut rec = RunRecorder::start("train", argv, &out)?;
    rec.config(&json!({ "scenes_dir": scenes_dir, "train": tc }))?;
    rec.seed("train", tc.seed);
    info!("training {} steps on {} scenes", tc.steps, scenes.len());
    let outcome = train(&scenes, &tc, Some(&out))?;
    rec.artifact(&out.join(LOG_FILE))?;
    for c in &outcome.checkpoints {
        rec.artifact(c)?;
    }
    if let (Some(first), Some(last)) = (outcome.log.first(), outcome.log.last()) {
        info!("L_total {:.5} -> {:.5}", first.l_total, last.l_total);
    }
    rec.finish()
}

pub fn eval_cmd(args: &EvalArgs, argv: Vec<String>) -> CliResult<RunManifest> {
    let cfg = load_config(args.common.config.as_deref())?;
    let mut ec = cfg.eval.clone();
    if let Some(seed) = args.common.seed.or(cfg.seed) {
        ec.seed = seed;
    }
    ec.refine |= args.refine;
    if let Some(csv) = &args.thresholds {
        ec.thresholds = parse_thresholds(csv)?;
    }
    validate_thresholds(&ec.thresholds).map_err(|e| CliError::Usage(format!("eval.thresholds: {e}")))?;
    let checkpoint = checkpoint_path(&args.checkpoint, &cfg)?;
    let scenes_dir = args.scenes.clone().unwrap_or_else(|| cfg.scenes_dir());
    let out = out_dir(&args.common, &cfg, PathBuf::from(DEFAULT_EVAL_OUT));
    let model = load_model(&checkpoint)?;
    let scenes = load_scenes(&scenes_dir)?;
    let mut rec = RunRecorder::start("eval", argv, &out)?;
    rec.config(&json!({ "checkpoint": checkpoint, "scenes_dir": scenes_dir, "eval": ec }))?;
    if ec.refine {
        rec.seed("refine", ec.seed);
    }
    let report = evaluate(&model, &scenes, &ec)?;
    let report_path = out.join(REPORT_FILE);
    write_json(&report_path, &report)?;
    rec.artifact(&report_path)?;
    let table = report.render_table();
    let table_path = out.join(TABLE_FILE);
    fs::write(&table_path, &table)?;
    rec.artifact(&table_path)?;
    print!("{table}");
    rec.finish()
}

#[derive(Serialize)]
struct PairSummary {
    frame: usize,
    cd_coarse_cm: f64,
    cd_refined_cm: f64,
}

pub fn refine_cmd(args: &RefineArgs, argv: Vec<String>) -> CliResult<RunManifest> {
    let cfg = load_config(args.common.config.as_deref())?;
    let seed = args.common.seed.or(cfg.seed).unwrap_or(cfg.eval.seed);
    let checkpoint = checkpoint_path(&args.checkpoint, &cfg)?;
    let scene_dir = match &args.scene {
        Some(d) => d.clone(),
        None => list_scenes(&cfg.scenes_dir())?.remove(0),
    };
    let out = out_dir(&args.common, &cfg, PathBuf::from(DEFAULT_REFINE_OUT));
    let model = load_model(&checkpoint)?;
    let scene = load_scene(&scene_dir)?;
    let mut rec = RunRecorder::start("refine", argv, &out)?;
    rec.config(&json!({ "checkpoint": checkpoint, "scene": scene_dir }))?;
    rec.seed("refine", seed);
    let seq = infer_sequence(&model, &scene, Some(seed))?;
    let refined = seq.refined.as_ref().ok_or_else(|| CliError::Runtime("refiner produced no output".into()))?;
    let pose0 = &scene.cameras[0].pose;
    let id = scene_id(&scene_dir);
    let dir = out.join(&id);
    fs::create_dir_all(&dir)?;
    let mut pairs = Vec::new();
    for (k, (coarse, fine)) in seq.reconstruction.iter().zip(refined).enumerate() {
        let j = k + 1;
        let gt = scene.gt_pointmaps[j].transformed(pose0).valid_points();
        pairs.push(PairSummary {
            frame: j,
            cd_coarse_cm: chamfer_distance(&coarse.valid_points(), &gt)?,
            cd_refined_cm: chamfer_distance(&fine.valid_points(), &gt)?,
        });
        for (stage, pm) in [("coarse", coarse), ("refined", fine)] {
            let path = dir.join(format!("{stage}_{j:02}.json"));
            write_pointmap(&path, pm)?;
            rec.artifact(&path)?;
        }
    }
    let n = pairs.len() as f64;
    let summary = json!({
        "scene_id": id,
        "seed": seed,
        "pairs_executed": seq.pairs_executed,
        "mean_cd_coarse_cm": pairs.iter().map(|p| p.cd_coarse_cm).sum::<f64>() / n,
        "mean_cd_refined_cm": pairs.iter().map(|p| p.cd_refined_cm).sum::<f64>() / n,
        "pairs": pairs,
    });
    let path = out.join(REFINE_SUMMARY);
    write_json(&path, &summary)?;
    rec.artifact(&path)?;
    rec.finish()
}

fn absolute(p: &Path) -> CliResult<PathBuf> {
    Ok(std::path::absolute(p)?)
}

pub fn export_cmd(args: &ExportArgs, argv: Vec<String>) -> CliResult<RunManifest> {
    let cfg = load_config(args.common.config.as_deref())?;
    let ply = absolute(&args.ply)?;
    let out = match &args.common.out {
        Some(o) => absolute(o)?,
        None => ply.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(".")),
    };
    if !ply.starts_with(&out) {
        return Err(CliError::Usage(format!("--ply {} is outside --out {}", ply.display(), out.display())));
    }
    if args.refine && args.checkpoint.is_none() {
        return Err(CliError::Usage("--refine needs --checkpoint".into()));
    }
    let seed = args.common.seed.or(cfg.seed).unwrap_or(cfg.eval.seed);
    let (pm, source): (Pointmap, serde_json::Value) = match (&args.input, &args.scene) {
        (Some(input), _) => (read_pointmap(input)?, json!({ "input": input })),
        (None, Some(scene_dir)) => {
            let scene = load_scene(scene_dir)?;
            let j = args.frame.unwrap_or(scene.frames() - 1);
            match &args.checkpoint {
                Some(ckpt) => {
                    let model = load_model(ckpt)?;
                    let pair = infer_pair(&model, &scene, j, args.refine.then_some(seed))?;
                    let pm = if args.refine { pair.refined.unwrap_or(pair.reconstruction) } else { pair.reconstruction };
                    (pm, json!({ "checkpoint": ckpt, "scene": scene_dir, "frame": j, "refine": args.refine }))
                }
                None => {
                    if j == 0 || j >= scene.frames() {
                        return Err(CliError::Usage(format!("--frame {j} is not in 1..{}", scene.frames())));
                    }
                    let (_, recon) = scene.pair_ground_truth(0, j)?;
                    (recon, json!({ "ground_truth": scene_dir, "frame": j }))
                }
            }
        }
        (None, None) => return Err(CliError::Usage("export needs --input or --scene".into())),
    };
    let mut rec = RunRecorder::start("export", argv, &out)?;
    rec.config(&json!({ "source": source, "ply": ply }))?;
    if args.refine {
        rec.seed("refine", seed);
    }
    let mut w = BufWriter::new(File::create(&ply)?);
    write_ascii_ply(&pm, &mut w)?;
    w.flush()?;
    drop(w);
    rec.artifact(&ply)?;
    info!("wrote {} points to {}", pm.num_valid(), ply.display());
    rec.finish()
}
