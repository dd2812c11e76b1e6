use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use intformer::checkpoint::load_checkpoint;
use intformer::evaluation::{assemble_all, evaluate, measure_throughput, EvalOptions};
use intformer::preprocess::{FrameSource, Preprocessor};

use super::{annotations_path, load_split, prepare_out, required_frames, write_json};
use crate::config::{resolve, Overrides, Partition};
use crate::manifest::Manifest;

pub const METRICS: &str = "metrics.json";
/// Timing is kept apart so that the metrics file is reproducible.
pub const THROUGHPUT: &str = "throughput.json";

pub struct EvalArgs<'a> {
    pub checkpoint: &'a Path,
    pub config_path: Option<&'a Path>,
    pub force: bool,
}

/// Profile and seed default to the checkpoint's, so the split matches training.
/// Output goes to `--out` or next to the checkpoint.
pub fn eval(args: &EvalArgs<'_>, mut ov: Overrides) -> Result<()> {
    let ckpt = load_checkpoint::<f32>(args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    ov.profile.get_or_insert(ckpt.meta.profile);
    ov.seed.get_or_insert(ckpt.meta.seed);
    let out = match ov.out.take() {
        Some(o) => o,
        None => args.checkpoint.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    let cfg = &resolve(args.config_path, &ov)?;
    let model = &ckpt.model;
    let mc = model.config();
    if mc.input.obs_len != cfg.data.windows.obs_len {
        bail!(
            "checkpoint expects {}-frame windows, config extracts {}",
            mc.input.obs_len,
            cfg.data.windows.obs_len
        );
    }
    let manifest_name = Manifest::file_name("eval");
    let ann = annotations_path(cfg)?.to_path_buf();
    let frames = required_frames(cfg, mc.mask.images)?;
    prepare_out(&out, &[METRICS, THROUGHPUT, &manifest_name], args.force)?;

    println!(
        "checkpoint {} (profile {}, seed {}, epoch {}, mask {})",
        args.checkpoint.display(),
        ckpt.meta.profile,
        ckpt.meta.seed,
        ckpt.meta.epoch,
        mc.mask
    );
    let split = load_split(cfg)?;
    let windows = match cfg.eval.split {
        Partition::Train => &split.train,
        Partition::Val => &split.val,
        Partition::Test => &split.test,
    };
    let pre = Preprocessor::new(&mc.input, &ckpt.norm, frames.as_ref().map(|f| f as &dyn FrameSource));
    let opts = EvalOptions {
        threshold: cfg.train.threshold,
        throughput: None,
    };
    let report = evaluate(model, windows, &pre, &opts)?;
    let metrics_path = out.join(METRICS);
    write_json(&metrics_path, &report)?;

    println!("{} split: {} samples", cfg.eval.split.name(), report.n_samples);
    let auc = report.auc.map_or_else(|| "undefined (one class)".into(), |a| format!("{a:.3}"));
    println!("accuracy {:.3}  auc {}  f1 {:.3}", report.accuracy, auc, report.f1);
    println!("tp {}  fp {}  tn {}  fn {}", report.tp, report.fp, report.tn, report.fn_);
    println!("parameters {}", report.parameter_count);

    if cfg.eval.measure_throughput {
        let t = &cfg.eval.throughput;
        let n = t.batch_size.min(windows.len());
        let batch = assemble_all::<f32>(&windows[..n], &pre, mc.mask)?;
        let rate = measure_throughput(model, &batch, t.warmup, t.trials)?;
        write_json(
            &out.join(THROUGHPUT),
            &serde_json::json!({
                "sequences_per_second": rate,
                "batch_size": n,
                "warmup": t.warmup,
                "trials": t.trials,
            }),
        )?;
        println!("throughput {rate:.1} sequences/s (batch {n}, median of {} trials)", t.trials);
    }

    let mut manifest = Manifest::new("eval", cfg);
    if let Some(p) = args.config_path {
        manifest.input("config", p)?;
    }
    manifest.input("checkpoint", args.checkpoint)?;
    manifest.input("annotations", &ann)?;
    if let (Some(_), Some(root)) = (&frames, &cfg.data.frames_root) {
        manifest.input("frames", root)?;
    }
    manifest.output("metrics", &metrics_path)?;
    manifest.write(&out)?;
    Ok(())
}
