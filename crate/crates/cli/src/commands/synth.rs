use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;

use intformer::dataset::{compute_class_weight, extract_windows, generate_synthetic, windows_for_tracks, write_annotations, SyntheticFrames};

use super::{label_counts, prepare_out};
use crate::config::ExperimentConfig;
use crate::manifest::Manifest;

pub const ANNOTATIONS: &str = "annotations.jsonl";
pub const FRAMES_DIR: &str = "frames";
/// Ready-to-run config pointing at the generated data.
pub const EXPERIMENT: &str = "experiment.toml";

pub fn synth(cfg: &ExperimentConfig, config_path: Option<&Path>, force: bool) -> Result<()> {
    let out = &cfg.out_dir;
    let manifest_name = Manifest::file_name("synth");
    prepare_out(out, &[ANNOTATIONS, FRAMES_DIR, EXPERIMENT, &manifest_name], force)?;
    let spec = &cfg.synth.signal;
    let tracks = generate_synthetic(cfg.synth.tracks, spec, cfg.seed)?;

    let ann_path = out.join(ANNOTATIONS);
    let mut w = BufWriter::new(fs::File::create(&ann_path).with_context(|| format!("creating {}", ann_path.display()))?);
    write_annotations(&mut w, &tracks)?;
    w.flush()?;

    let frames_dir = out.join(FRAMES_DIR);
    if frames_dir.exists() {
        fs::remove_dir_all(&frames_dir).with_context(|| format!("clearing {}", frames_dir.display()))?;
    }
    let mut n_frames = 0;
    if cfg.synth.frames {
        let renderer = SyntheticFrames::new(&tracks, spec, cfg.seed);
        let mut jobs: Vec<(String, u32, PathBuf)> = Vec::new();
        for t in &tracks {
            let used: BTreeSet<u32> = extract_windows(t, &cfg.data.windows)?
                .iter()
                .flat_map(|w| w.frames.iter().map(|f| f.frame_index))
                .collect();
            let dir = frames_dir.join(&t.video_id);
            fs::create_dir_all(&dir)?;
            jobs.extend(used.into_iter().map(|f| (t.video_id.clone(), f, dir.join(format!("{f:06}.png")))));
        }
        let (fw, fh) = (cfg.synth.frame_width, cfg.synth.frame_height);
        jobs.par_iter().try_for_each(|(video, f, path)| -> Result<()> {
            renderer
                .render_frame(video, *f, fw, fh)?
                .save(path)
                .with_context(|| format!("writing {}", path.display()))
        })?;
        n_frames = jobs.len();
    }

    let mut experiment = cfg.clone();
    experiment.data.annotations = Some(PathBuf::from(ANNOTATIONS));
    experiment.data.frames_root = cfg.synth.frames.then(|| PathBuf::from(FRAMES_DIR));
    experiment.out_dir = PathBuf::from("run");
    fs::write(out.join(EXPERIMENT), experiment.to_toml()?)?;

    let mut manifest = Manifest::new("synth", cfg);
    if let Some(p) = config_path {
        manifest.input("config", p)?;
    }
    manifest.output("annotations", &ann_path)?;
    if cfg.synth.frames {
        manifest.output("frames", &frames_dir)?;
    }
    manifest.output("experiment", &out.join(EXPERIMENT))?;
    manifest.write(out)?;

    let pos = tracks.iter().filter(|t| t.label == 1).count();
    println!("wrote {} tracks to {}", tracks.len(), ann_path.display());
    println!("tracks: {} crossing, {} not crossing", pos, tracks.len() - pos);
    if cfg.synth.frames {
        println!("wrote {n_frames} frames under {}", frames_dir.display());
    }
    let windows = windows_for_tracks(&tracks, &cfg.data.windows)?;
    println!("windows: {}", label_counts(&windows));
    match compute_class_weight(&windows) {
        Ok(w) => println!("W_c = {:?} ({} non-crossing / {} crossing windows)", w.value(), w.non_crossing, w.crossing),
        Err(e) => println!("W_c undefined: {e}"),
    }
    Ok(())
}
