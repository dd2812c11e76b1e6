//! Metrics, test-set evaluation, throughput and the input-importance study.

mod ablation;
mod metrics;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::ObservationWindow;
use crate::error::{Error, Result};
use crate::fusion::{IntFormer, IntFormerConfig};
use crate::preprocess::{FeatureBundle, Preprocessor};
use crate::scalar::Scalar;
use crate::training::loss::sigmoid;

pub use ablation::{ablation_run, AblationOptions, AblationRow, AblationTable, RowStatus};
pub use metrics::{accuracy, auc_roc, f1_score, threshold, Confusion};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// Absent when the evaluated labels contain a single class.
    pub auc: Option<f64>,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n_samples: usize,
    pub threshold: f64,
    pub parameter_count: usize,
    pub sequences_per_second: Option<f64>,
    pub config_fingerprint: String,
}

impl MetricsReport {
    /// Metrics of crossing probabilities against labels.
    pub fn from_scores(probs: &[f64], labels: &[u8], t: f64) -> Result<Self> {
        let c = Confusion::from_predictions(&threshold(probs, t), labels)?;
        let both = labels.contains(&0) && labels.contains(&1);
        let auc = if both { Some(auc_roc(probs, labels)?) } else { None };
        Ok(MetricsReport {
            accuracy: c.accuracy(),
            auc,
            f1: c.f1(),
            tp: c.tp,
            fp: c.fp,
            tn: c.tn,
            fn_: c.fn_,
            n_samples: c.total(),
            threshold: t,
            parameter_count: 0,
            sequences_per_second: None,
            config_fingerprint: String::new(),
        })
    }
}

/// Hex SHA-256 of the canonical JSON form of a model configuration.
pub fn config_fingerprint(config: &IntFormerConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

/// Assembles bundles for `windows` in parallel, preserving order.
pub fn assemble_all<T: Scalar>(
    windows: &[ObservationWindow],
    pre: &Preprocessor<'_>,
    mask: crate::mask::FeatureMask,
) -> Result<Vec<FeatureBundle<T>>> {
    windows.par_iter().map(|w| pre.assemble(w, mask)).collect()
}

/// Crossing probabilities for each bundle (dropout off).
pub fn predict_proba<T: Scalar>(model: &IntFormer<T>, bundles: &[FeatureBundle<T>]) -> Result<Vec<f64>> {
    Ok(model
        .forward_batch(bundles)?
        .into_iter()
        .map(|z| sigmoid(z).to_f64_lossy())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThroughputOptions {
    pub batch_size: usize,
    pub warmup: usize,
    pub trials: usize,
}

impl Default for ThroughputOptions {
    fn default() -> Self {
        ThroughputOptions {
            batch_size: 8,
            warmup: 10,
            trials: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub threshold: f64,
    pub throughput: Option<ThroughputOptions>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            threshold: 0.5,
            throughput: Some(ThroughputOptions::default()),
        }
    }
}

/// Full deterministic pass over `windows`.
pub fn evaluate<T: Scalar>(
    model: &IntFormer<T>,
    windows: &[ObservationWindow],
    pre: &Preprocessor<'_>,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    if windows.is_empty() {
        return Err(Error::Metric("evaluation set is empty".into()));
    }
    let bundles = assemble_all::<T>(windows, pre, model.config().mask)?;
    evaluate_bundles(model, &bundles, opts)
}

pub fn evaluate_bundles<T: Scalar>(model: &IntFormer<T>, bundles: &[FeatureBundle<T>], opts: &EvalOptions) -> Result<MetricsReport> {
    if bundles.is_empty() {
        return Err(Error::Metric("evaluation set is empty".into()));
    }
    let probs = predict_proba(model, bundles)?;
    let labels: Vec<u8> = bundles.iter().map(|b| b.label).collect();
    let mut report = MetricsReport::from_scores(&probs, &labels, opts.threshold)?;
    report.parameter_count = model.parameter_count();
    report.config_fingerprint = config_fingerprint(model.config());
    if let Some(t) = &opts.throughput {
        let n = t.batch_size.clamp(1, bundles.len());
        report.sequences_per_second = Some(measure_throughput(model, &bundles[..n], t.warmup, t.trials)?);
    }
    Ok(report)
}

/// Median over `n_trials` of `batch.len() / forward time`, after `n_warmup` untimed passes.
pub fn measure_throughput<T: Scalar>(
    model: &IntFormer<T>,
    batch: &[FeatureBundle<T>],
    n_warmup: usize,
    n_trials: usize,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Metric("throughput batch is empty".into()));
    }
    for _ in 0..n_warmup {
        model.forward_batch(batch)?;
    }
    let mut rates = Vec::with_capacity(n_trials.max(1));
    for _ in 0..n_trials.max(1) {
        let start = Instant::now();
        std::hint::black_box(model.forward_batch(batch)?);
        let secs = start.elapsed().as_secs_f64().max(1e-9);
        rates.push(batch.len() as f64 / secs);
    }
    rates.sort_by(f64::total_cmp);
    let mid = rates.len() / 2;
    Ok(if rates.len() % 2 == 1 {
        rates[mid]
    } else {
        (rates[mid - 1] + rates[mid]) / 2.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, windows_for_tracks, SignalSpec, WindowOptions};
    use crate::mask::FeatureMask;
    use crate::preprocess::{InputGeometry, NormStats};

    fn setup(seed: u64) -> (Vec<ObservationWindow>, NormStats, InputGeometry) {
        setup_with(&SignalSpec::speed_only(), seed)
    }

    fn setup_with(spec: &SignalSpec, seed: u64) -> (Vec<ObservationWindow>, NormStats, InputGeometry) {
        let tracks = generate_synthetic(20, spec, seed).unwrap();
        let windows = windows_for_tracks(&tracks, &WindowOptions { stride: 8, ..WindowOptions::default() }).unwrap();
        let geometry = InputGeometry::default();
        let stats = NormStats::fit(&windows, &geometry);
        (windows, stats, geometry)
    }

    fn speed_model(seed: u64) -> IntFormer<f64> {
        IntFormer::new(IntFormerConfig::compact().with_mask(FeatureMask::new(false, false, false, true)), seed).unwrap()
    }

    #[test]
    fn report_counts_are_consistent() {
        let (windows, stats, geometry) = setup(1);
        let pre = Preprocessor::new(&geometry, &stats, None);
        let model = speed_model(1);
        let opts = EvalOptions {
            throughput: Some(ThroughputOptions { batch_size: 4, warmup: 1, trials: 3 }),
            ..EvalOptions::default()
        };
        let r = evaluate(&model, &windows, &pre, &opts).unwrap();
        assert_eq!(r.tp + r.fp + r.tn + r.fn_, r.n_samples);
        assert_eq!(r.n_samples, windows.len());
        assert!((r.accuracy - (r.tp + r.tn) as f64 / r.n_samples as f64).abs() < 1e-15);
        assert!(r.sequences_per_second.unwrap() > 0.0);
        assert_eq!(r.parameter_count, model.parameter_count());
        assert_eq!(r.config_fingerprint.len(), 64);
        assert!(evaluate(&model, &[], &pre, &opts).is_err());
    }

    #[test]
    fn duplicating_windows_leaves_metrics_unchanged() {
        let (windows, stats, geometry) = setup(2);
        let pre = Preprocessor::new(&geometry, &stats, None);
        let model = speed_model(2);
        let opts = EvalOptions { throughput: None, ..EvalOptions::default() };
        let a = evaluate(&model, &windows, &pre, &opts).unwrap();
        let doubled: Vec<_> = windows.iter().chain(windows.iter()).cloned().collect();
        let b = evaluate(&model, &doubled, &pre, &opts).unwrap();
        assert_eq!(a.accuracy, b.accuracy);
        assert_eq!(a.f1, b.f1);
        assert!((a.auc.unwrap() - b.auc.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn untrained_model_is_near_chance() {
        let mut aucs = Vec::new();
        for seed in 0..10 {
            let (windows, stats, geometry) = setup_with(&SignalSpec::no_signal(), 100 + seed);
            let pre = Preprocessor::new(&geometry, &stats, None);
            let opts = EvalOptions { throughput: None, ..EvalOptions::default() };
            aucs.push(evaluate(&speed_model(seed), &windows, &pre, &opts).unwrap().auc.unwrap());
        }
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        assert!((mean - 0.5).abs() <= 0.1, "{aucs:?}");
    }

    #[test]
    fn throughput_scales_sanely() {
        let (windows, stats, geometry) = setup(3);
        let pre = Preprocessor::new(&geometry, &stats, None);
        let model = speed_model(3);
        let bundles = assemble_all::<f64>(&windows[..16], &pre, model.config().mask).unwrap();
        let one = measure_throughput(&model, &bundles[..8], 2, 5).unwrap();
        let two = measure_throughput(&model, &bundles[..16], 2, 5).unwrap();
        assert!(one > 0.0 && two > 0.0);
        assert!(two / one < 10.0 && one / two < 10.0);
    }
}
