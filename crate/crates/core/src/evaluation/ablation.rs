use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetSplit;
use crate::error::{Error, Result};
use crate::fusion::{IntFormer, IntFormerConfig};
use crate::mask::FeatureMask;
use crate::preprocess::Preprocessor;
use crate::scalar::Scalar;
use crate::training::{train, TrainConfig};

use super::{evaluate, EvalOptions, MetricsReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationOptions {
    pub masks: Vec<FeatureMask>,
    pub seeds: Vec<u64>,
}

impl Default for AblationOptions {
    fn default() -> Self {
        AblationOptions {
            masks: FeatureMask::importance_study(),
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "reason")]
pub enum RowStatus {
    Ok,
    Failed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mask: FeatureMask,
    pub seed: u64,
    pub status: RowStatus,
    pub report: Option<MetricsReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    /// Rows in mask order, seeds in order within a mask.
    pub rows: Vec<AblationRow>,
}

/// Mean and range of one metric over a mask's successful seeds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

fn summarize(values: impl Iterator<Item = f64>) -> Option<Summary> {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return None;
    }
    Some(Summary {
        mean: v.iter().sum::<f64>() / v.len() as f64,
        min: v.iter().copied().fold(f64::INFINITY, f64::min),
        max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

impl AblationTable {
    pub fn masks(&self) -> Vec<FeatureMask> {
        let mut out: Vec<FeatureMask> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.mask) {
                out.push(r.mask);
            }
        }
        out
    }

    fn reports(&self, mask: FeatureMask) -> impl Iterator<Item = &MetricsReport> {
        self.rows.iter().filter(move |r| r.mask == mask).filter_map(|r| r.report.as_ref())
    }

    /// `(accuracy, auc, f1)` summaries for `mask`.
    pub fn summary(&self, mask: FeatureMask) -> (Option<Summary>, Option<Summary>, Option<Summary>) {
        (
            summarize(self.reports(mask).map(|r| r.accuracy)),
            summarize(self.reports(mask).filter_map(|r| r.auc)),
            summarize(self.reports(mask).map(|r| r.f1)),
        )
    }

    pub fn mean_auc(&self, mask: FeatureMask) -> Option<f64> {
        self.summary(mask).1.map(|s| s.mean)
    }

    /// Delimited table: one row per (mask, seed) and a `mean` row per mask whose
    /// metric columns hold the mean and the `_range` columns `max - min`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mark = |b: bool| if b { "x" } else { "" };
        let f3 = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.3}"));
        w.write_record([
            "imgs", "bbs", "pose", "speed", "seed", "acc", "auc", "f1", "acc_range", "auc_range", "f1_range", "status",
        ])
        .map_err(csv_err)?;
        for mask in self.masks() {
            let cols = [mark(mask.images), mark(mask.boxes), mark(mask.pose), mark(mask.speed)];
            for r in self.rows.iter().filter(|r| r.mask == mask) {
                let rep = r.report.as_ref();
                let status = match &r.status {
                    RowStatus::Ok => "ok".to_string(),
                    RowStatus::Failed(why) => format!("failed: {why}"),
                };
                let mut rec: Vec<String> = cols.iter().map(|s| s.to_string()).collect();
                rec.extend([
                    r.seed.to_string(),
                    f3(rep.map(|m| m.accuracy)),
                    f3(rep.and_then(|m| m.auc)),
                    f3(rep.map(|m| m.f1)),
                    String::new(),
                    String::new(),
                    String::new(),
                    status,
                ]);
                w.write_record(&rec).map_err(csv_err)?;
            }
            let (acc, auc, f1) = self.summary(mask);
            let mut rec: Vec<String> = cols.iter().map(|s| s.to_string()).collect();
            let range = |s: Option<Summary>| s.map(|s| s.max - s.min);
            rec.extend([
                "mean".to_string(),
                f3(acc.map(|s| s.mean)),
                f3(auc.map(|s| s.mean)),
                f3(f1.map(|s| s.mean)),
                f3(range(acc)),
                f3(range(auc)),
                f3(range(f1)),
                if acc.is_some() { "ok" } else { "failed" }.to_string(),
            ]);
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Metric(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("utf-8 table"))
    }

    /// Plain-text rendering of the per-mask means.
    pub fn render(&self) -> String {
        let mut out = String::from("Imgs BBs Pose Speed |   Acc   AUC    F1\n");
        for mask in self.masks() {
            let (acc, auc, f1) = self.summary(mask);
            let m = |b: bool| if b { "  x " } else { "    " };
            let v = |s: Option<Summary>| s.map_or("    - ".into(), |s| format!("{:6.3}", s.mean));
            let _ = writeln!(
                out,
                "{} {} {} {}  | {} {} {}",
                m(mask.images),
                m(mask.boxes),
                m(mask.pose),
                m(mask.speed),
                v(acc),
                v(auc),
                v(f1)
            );
        }
        out
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Metric(format!("writing table: {e}"))
}

/// Trains and evaluates one model per (mask, seed) under identical
/// hyperparameters. Masks run concurrently. A failing run is recorded in its
/// row and does not stop the others.
pub fn ablation_run<T: Scalar>(
    base: &IntFormerConfig,
    train_config: &TrainConfig,
    split: &DatasetSplit,
    pre: &Preprocessor<'_>,
    opts: &AblationOptions,
) -> Result<AblationTable> {
    if opts.masks.is_empty() || opts.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one mask and one seed".into()));
    }
    for m in &opts.masks {
        m.validate()?;
    }
    let eval = EvalOptions {
        threshold: train_config.threshold,
        throughput: None,
    };
    let per_mask: Vec<Vec<AblationRow>> = opts
        .masks
        .par_iter()
        .map(|&mask| {
            opts.seeds
                .iter()
                .map(|&seed| {
                    let result = (|| -> Result<MetricsReport> {
                        let model = IntFormer::<T>::new(base.clone().with_mask(mask), seed)?;
                        let cfg = TrainConfig { seed, ..train_config.clone() };
                        let outcome = train(model, split, pre, &cfg, |_| {})?;
                        evaluate(&outcome.best, &split.test, pre, &eval)
                    })();
                    match result {
                        Ok(report) => AblationRow {
                            mask,
                            seed,
                            status: RowStatus::Ok,
                            report: Some(report),
                        },
                        Err(e) => AblationRow {
                            mask,
                            seed,
                            status: RowStatus::Failed(e.to_string()),
                            report: None,
                        },
                    }
                })
                .collect()
        })
        .collect();
    Ok(AblationTable {
        rows: per_mask.into_iter().flatten().collect(),
    })
}
