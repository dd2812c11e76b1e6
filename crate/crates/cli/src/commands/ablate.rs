use std::fs;
use std::path::Path;

use anyhow::Result;

use intformer::evaluation::{ablation_run, AblationOptions, RowStatus};
use intformer::preprocess::{FrameSource, NormStats, Preprocessor};

use super::{annotations_path, frame_source, frames_root, load_split, prepare_out, write_json};
use crate::config::ExperimentConfig;
use crate::manifest::Manifest;

pub const TABLE_CSV: &str = "ablation.csv";
pub const TABLE_JSON: &str = "ablation.json";

/// Runs that cannot be set up (missing frames, invalid mask for the fusion mode)
/// are marked failed in their row; the command itself still succeeds.
pub fn ablate(cfg: &ExperimentConfig, config_path: Option<&Path>, force: bool) -> Result<()> {
    let out = &cfg.out_dir;
    let manifest_name = Manifest::file_name("ablate");
    let ann = annotations_path(cfg)?.to_path_buf();
    let masks = cfg.ablation_masks()?;
    prepare_out(out, &[TABLE_CSV, TABLE_JSON, &manifest_name], force)?;

    let uses_images = masks.iter().any(|m| m.images);
    let frames = frames_root(cfg).filter(|_| uses_images).map(|r| frame_source(cfg, r));
    if uses_images && frames.is_none() {
        eprintln!("warning: no frames root set; runs with the image input will fail");
    }
    let split = load_split(cfg)?;
    let norm = NormStats::fit(&split.train, &cfg.model.input);
    let pre = Preprocessor::new(&cfg.model.input, &norm, frames.as_ref().map(|f| f as &dyn FrameSource));
    let opts = AblationOptions {
        masks,
        seeds: cfg.ablation.seeds.clone(),
    };
    println!(
        "{} masks x {} seeds, {} epochs each",
        opts.masks.len(),
        opts.seeds.len(),
        cfg.train.epochs
    );
    let table = ablation_run::<f32>(&cfg.model, &cfg.train, &split, &pre, &opts)?;

    let csv_path = out.join(TABLE_CSV);
    let json_path = out.join(TABLE_JSON);
    fs::write(&csv_path, table.to_csv()?)?;
    write_json(&json_path, &table)?;
    print!("{}", table.render());

    let failed: Vec<_> = table
        .rows
        .iter()
        .filter_map(|r| match &r.status {
            RowStatus::Failed(why) => Some(format!("{} seed {}: {why}", r.mask, r.seed)),
            RowStatus::Ok => None,
        })
        .collect();
    if !failed.is_empty() {
        eprintln!("{} of {} runs failed:", failed.len(), table.rows.len());
        for f in &failed {
            eprintln!("  {f}");
        }
    }

    let mut manifest = Manifest::new("ablate", cfg);
    if let Some(p) = config_path {
        manifest.input("config", p)?;
    }
    manifest.input("annotations", &ann)?;
    if let (Some(_), Some(root)) = (&frames, &cfg.data.frames_root) {
        manifest.input("frames", root)?;
    }
    manifest.output("table_csv", &csv_path)?;
    manifest.output("table_json", &json_path)?;
    manifest.write(out)?;
    Ok(())
}
