use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Read;
use std::path::Path;

use anyhow::{Context, Result};

use intformer::checkpoint::{decode, Checkpoint, MAGIC};
use intformer::dataset::{compute_class_weight, load_annotations, windows_for_tracks};
use intformer::evaluation::config_fingerprint;
use intformer::nn::ParamRole;
use intformer::training::{make_param_groups, TrainConfig};
use intformer::Scalar;

use super::label_counts;
use crate::config::{resolve, ExperimentConfig, Overrides};

/// Describes a checkpoint, an annotation file or a config file, chosen by content
/// and extension.
pub fn inspect(path: &Path, config_path: Option<&Path>) -> Result<()> {
    let mut head = [0u8; 8];
    let n = fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .read(&mut head)?;
    if n == head.len() && &head == MAGIC {
        return inspect_checkpoint(path);
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") | Some("json") => {
            let cfg = resolve(Some(path), &Overrides::default())?;
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
        _ => inspect_annotations(path, &resolve(config_path, &Overrides::default())?),
    }
}

fn inspect_checkpoint(path: &Path) -> Result<()> {
    let bytes = fs::read(path)?;
    match decode::<f32>(&bytes) {
        Ok(c) => describe(path, &c),
        Err(first) => match decode::<f64>(&bytes) {
            Ok(c) => describe(path, &c),
            Err(_) => Err(first).with_context(|| format!("reading {}", path.display())),
        },
    }
}

fn describe<T: Scalar>(path: &Path, c: &Checkpoint<T>) -> Result<()> {
    let cfg = c.model.config();
    println!("checkpoint   {}", path.display());
    println!("dtype        {}", T::DTYPE);
    println!("profile      {}", c.meta.profile);
    println!("seed         {}", c.meta.seed);
    println!("epoch        {}", c.meta.epoch);
    println!("schema       annotation v{}", c.meta.annotation_schema);
    println!("mask         {}", cfg.mask);
    println!("fusion       {:?}", cfg.fusion);
    println!(
        "input        {} frames, {}x{} crops, pose {}",
        cfg.input.obs_len, cfg.input.height, cfg.input.width, cfg.input.pose_dim
    );
    match &c.norm.speed {
        Some(s) => println!("speed norm   mean {:.4} std {:.4}", s.mean, s.std),
        None => println!("speed norm   none"),
    }
    println!("fingerprint  {}", config_fingerprint(cfg));
    let specs = c.model.params().specs();
    let mut by_role: BTreeMap<String, usize> = BTreeMap::new();
    for s in specs {
        let role = match s.role {
            ParamRole::Backbone => "backbone",
            ParamRole::Shift => "shift",
            ParamRole::SeqEncoder => "seq_encoder",
            ParamRole::Fusion => "fusion",
        };
        *by_role.entry(role.into()).or_default() += s.len();
    }
    println!("parameters   {}", c.model.parameter_count());
    for (role, n) in &by_role {
        println!("  {role:<12} {n}");
    }
    println!("groups under the {} preset:", c.meta.profile);
    for g in make_param_groups(specs, &TrainConfig::profile(c.meta.profile))? {
        println!("  {:<22} lr {:e}  {} values", g.name, g.lr, g.len());
    }
    Ok(())
}

fn inspect_annotations(path: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let report = load_annotations(path, &cfg.load_options()).with_context(|| format!("loading {}", path.display()))?;
    let tracks = &report.tracks;
    let videos: BTreeSet<&str> = tracks.iter().map(|t| t.video_id.as_str()).collect();
    let pos = tracks.iter().filter(|t| t.label == 1).count();
    let with_speed = tracks.iter().filter(|t| t.ego_speed.is_some()).count();
    println!("annotations  {}", path.display());
    println!("tracks       {} ({} crossing, {} not crossing)", tracks.len(), pos, tracks.len() - pos);
    println!("videos       {}", videos.len());
    println!("with speed   {with_speed}");
    println!("rejected     {}", report.diagnostics.len());
    for d in report.diagnostics.iter().take(10) {
        println!("  line {}: track {}: {}", d.line, d.track_id, d.rule);
    }
    let w = &cfg.data.windows;
    let windows = windows_for_tracks(tracks, w)?;
    println!(
        "windows      {} (obs {}, tte {}..={}, stride {})",
        label_counts(&windows),
        w.obs_len,
        w.tte_min,
        w.tte_max,
        w.stride
    );
    match compute_class_weight(&windows) {
        Ok(cw) => println!("W_c          {:?} over all windows", cw.value()),
        Err(e) => println!("W_c          undefined: {e}"),
    }
    Ok(())
}
