use std::fs;
use std::path::Path;

use anyhow::Result;

use intformer::checkpoint::{checkpoint_file_name, save_checkpoint, CheckpointMeta};
use intformer::preprocess::{FrameSource, NormStats, Preprocessor};
use intformer::training::{self, history_jsonl, make_param_groups, EpochRecord};
use intformer::IntFormerF32;

use super::{annotations_path, load_split, prepare_out, required_frames};
use crate::config::ExperimentConfig;
use crate::manifest::Manifest;

pub const HISTORY: &str = "history.jsonl";
/// Wall-clock seconds per epoch, kept out of the history.
pub const TIMING: &str = "timing.jsonl";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
}

pub fn train(cfg: &ExperimentConfig, config_path: Option<&Path>, force: bool) -> Result<()> {
    let out = &cfg.out_dir;
    let manifest_name = Manifest::file_name("train");
    let ann = annotations_path(cfg)?.to_path_buf();
    let frames = required_frames(cfg, cfg.model.mask.images)?;
    prepare_out(out, &[HISTORY, TIMING, &manifest_name], force)?;

    println!("profile {} | mask {} | seed {}", cfg.profile, cfg.model.mask, cfg.seed);
    let split = load_split(cfg)?;
    let norm = NormStats::fit(&split.train, &cfg.model.input);
    let model = IntFormerF32::new(cfg.model.clone(), cfg.seed)?;
    println!("parameters: {}", model.parameter_count());
    for g in make_param_groups(model.params().specs(), &cfg.train)? {
        println!("group {:<22} lr {:<8e} {} tensors, {} values", g.name, g.lr, g.params.len(), g.len());
    }

    let pre = Preprocessor::new(&cfg.model.input, &norm, frames.as_ref().map(|f| f as &dyn FrameSource));
    let outcome = training::train(model, &split, &pre, &cfg.train, |r: &EpochRecord| {
        println!(
            "epoch {:>3}  loss {:.4}  train acc {:.3}  val acc {}  auc {}  f1 {}",
            r.epoch,
            r.train_loss,
            r.train_acc,
            fmt_opt(r.val_acc),
            fmt_opt(r.val_auc),
            fmt_opt(r.val_f1)
        );
    })?;

    let history_path = out.join(HISTORY);
    fs::write(&history_path, history_jsonl(&outcome.history))?;
    let timing: String = outcome
        .epoch_seconds
        .iter()
        .enumerate()
        .map(|(i, s)| serde_json::json!({ "epoch": i + 1, "seconds": s }).to_string() + "\n")
        .collect();
    fs::write(out.join(TIMING), timing)?;

    let meta = CheckpointMeta::new(cfg.profile, cfg.seed, outcome.best_epoch);
    let ckpt_path = out.join(checkpoint_file_name(&meta));
    save_checkpoint(&ckpt_path, &outcome.best, &norm, &meta)?;

    let mut manifest = Manifest::new("train", cfg);
    if let Some(p) = config_path {
        manifest.input("config", p)?;
    }
    manifest.input("annotations", &ann)?;
    if let (Some(_), Some(root)) = (&frames, &cfg.data.frames_root) {
        manifest.input("frames", root)?;
    }
    manifest.output("history", &history_path)?;
    manifest.output("checkpoint", &ckpt_path)?;
    manifest.write(out)?;

    println!("class weight W_c = {:?}", outcome.class_weight);
    println!("best epoch {} -> {}", outcome.best_epoch, ckpt_path.display());
    Ok(())
}
