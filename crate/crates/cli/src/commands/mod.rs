mod ablate;
mod eval;
mod inspect;
mod synth;
mod train;

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

use intformer::dataset::{load_annotations, split_by_video, DatasetSplit, ObservationWindow, TrackAnnotation};
use intformer::preprocess::DirectoryFrames;

use crate::config::{ExperimentConfig, FRAMES_ROOT_ENV};

pub use ablate::ablate;
pub use eval::{eval, EvalArgs};
pub use inspect::inspect;
pub use synth::synth;
pub use train::train;

/// Creates `dir` and refuses to touch any of `outputs` that already exist unless `force`.
fn prepare_out(dir: &Path, outputs: &[&str], force: bool) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    if !force {
        if let Some(existing) = outputs.iter().map(|o| dir.join(o)).find(|p| p.exists()) {
            bail!("{} already exists; pass --force to overwrite", existing.display());
        }
    }
    Ok(())
}

fn annotations_path(cfg: &ExperimentConfig) -> Result<&Path> {
    let path = cfg
        .data
        .annotations
        .as_deref()
        .context("no annotation file: set data.annotations in the config")?;
    if !path.is_file() {
        bail!("annotation file {} does not exist", path.display());
    }
    Ok(path)
}

fn load_tracks(cfg: &ExperimentConfig) -> Result<Vec<TrackAnnotation>> {
    let path = annotations_path(cfg)?;
    let report = load_annotations(path, &cfg.load_options()).with_context(|| format!("loading {}", path.display()))?;
    if !report.diagnostics.is_empty() {
        eprintln!("skipped {} invalid tracks:", report.diagnostics.len());
        for d in report.diagnostics.iter().take(10) {
            eprintln!("  line {}: track {}: {}", d.line, d.track_id, d.rule);
        }
    }
    if report.tracks.is_empty() {
        bail!("{} contains no valid tracks", path.display());
    }
    Ok(report.tracks)
}

fn load_split(cfg: &ExperimentConfig) -> Result<DatasetSplit> {
    let tracks = load_tracks(cfg)?;
    let split = split_by_video(&tracks, cfg.data.split, cfg.seed, &cfg.data.windows)?;
    for (name, windows) in split.partitions() {
        println!("{name:>5}: {}", label_counts(windows));
    }
    Ok(split)
}

fn label_counts(windows: &[ObservationWindow]) -> String {
    let pos = windows.iter().filter(|w| w.label == 1).count();
    format!("{} windows ({} crossing, {} not crossing)", windows.len(), pos, windows.len() - pos)
}

fn frames_root(cfg: &ExperimentConfig) -> Option<&Path> {
    cfg.data.frames_root.as_deref()
}

fn frame_source(cfg: &ExperimentConfig, root: &Path) -> DirectoryFrames {
    DirectoryFrames::new(root, cfg.model.input.image_width, cfg.model.input.image_height)
}

/// Frame source for runs whose model needs images.
fn required_frames(cfg: &ExperimentConfig, needed: bool) -> Result<Option<DirectoryFrames>> {
    if !needed {
        return Ok(None);
    }
    match frames_root(cfg) {
        Some(root) if root.is_dir() => Ok(Some(frame_source(cfg, root))),
        Some(root) => bail!("frames root {} is not a directory", root.display()),
        None => bail!("the image input is active but no frames root is set (data.frames_root or {FRAMES_ROOT_ENV})"),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    fs::write(path, json).with_context(|| format!("writing {}", path.display()))
}
