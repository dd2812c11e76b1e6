//! Loss, optimizer groups and the seeded training loop.

pub mod config;
pub mod loss;
pub mod optim;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{compute_class_weight, DatasetSplit};
use crate::error::{Error, Result};
use crate::evaluation::{assemble_all, predict_proba, MetricsReport};
use crate::fusion::IntFormer;
use crate::nn::Grads;
use crate::preprocess::{FeatureBundle, Preprocessor};
use crate::scalar::Scalar;

pub use config::{OptimizerKind, Profile, TrainConfig};
pub use loss::{sigmoid, softplus, weighted_bce, weighted_bce_grad};
pub use optim::{check_partition, make_param_groups, Optimizer, ParamGroup};

/// One line of the history file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Eval-mode accuracy over the training split after the epoch.
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub val_auc: Option<f64>,
    pub val_f1: Option<f64>,
}

pub struct TrainOutcome<T> {
    /// Parameters from the epoch with the best validation score.
    pub best: IntFormer<T>,
    pub best_epoch: usize,
    pub last: IntFormer<T>,
    pub history: Vec<EpochRecord>,
    /// Wall-clock seconds per epoch. Kept apart from `history` so that the
    /// history is reproducible byte for byte.
    pub epoch_seconds: Vec<f64>,
    pub class_weight: f64,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Dropout seed of sample `index` in `epoch`, derived from the run seed.
fn dropout_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    mix(mix(mix(seed) ^ epoch as u64) ^ index as u64)
}

/// Mean loss and summed gradient of one mini-batch.
fn batch_gradient<T: Scalar>(
    model: &IntFormer<T>,
    bundles: &[FeatureBundle<T>],
    indices: &[usize],
    w_c: T,
    seed: u64,
    epoch: usize,
) -> Result<(f64, Grads<T>)> {
    let n = T::of(indices.len() as f64);
    let per_sample: Vec<(T, Grads<T>)> = indices
        .par_iter()
        .map(|&i| {
            let b = &bundles[i];
            let (logit, cache) = model.forward_train(b, dropout_seed(seed, epoch, i))?;
            let loss = weighted_bce(logit, b.label, w_c)?;
            let d = weighted_bce_grad(logit, b.label, w_c)? / n;
            let mut g = model.params().zero_grads();
            model.backward(&cache, d, &mut g)?;
            Ok((loss, g))
        })
        .collect::<Result<_>>()?;
    let mut total = model.params().zero_grads();
    let mut loss = T::zero();
    for (l, g) in &per_sample {
        loss += *l;
        total.add_assign(g);
    }
    Ok(((loss / n).to_f64_lossy(), total))
}

fn metrics<T: Scalar>(model: &IntFormer<T>, bundles: &[FeatureBundle<T>], threshold: f64) -> Result<MetricsReport> {
    let probs = predict_proba(model, bundles)?;
    let labels: Vec<u8> = bundles.iter().map(|b| b.label).collect();
    MetricsReport::from_scores(&probs, &labels, threshold)
}

/// Trains `model` on `split.train`, selecting the epoch with the best
/// validation AUC (accuracy when AUC is undefined). `on_epoch` sees each record
/// as it is produced.
pub fn train<T: Scalar>(
    mut model: IntFormer<T>,
    split: &DatasetSplit,
    pre: &Preprocessor<'_>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let w_c = match config.class_weight {
        Some(w) => w,
        None => compute_class_weight(&split.train)?.value(),
    };
    let mask = model.config().mask;
    let train_bundles = assemble_all::<T>(&split.train, pre, mask)?;
    let val_bundles = assemble_all::<T>(&split.val, pre, mask)?;

    let groups = make_param_groups(model.params().specs(), config)?;
    let mut opt = Optimizer::<T>::new(config.optimizer, groups, config.weight_decay, model.parameter_count());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_bundles.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut epoch_seconds = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, IntFormer<T>)> = None;

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (bi, batch) in order.chunks(config.batch_size).enumerate() {
            let diverged = || Error::Divergence { epoch, batch: bi + 1 };
            let (loss, grads) = match batch_gradient(&model, &train_bundles, batch, T::of(w_c), config.seed, epoch) {
                Ok(v) => v,
                Err(Error::NonFinite(_)) => return Err(diverged()),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() || !grads.all_finite() {
                return Err(diverged());
            }
            opt.step(model.params_mut(), &grads)?;
            loss_sum += loss * batch.len() as f64;
        }
        let train_acc = metrics(&model, &train_bundles, config.threshold)?.accuracy;
        let val = if val_bundles.is_empty() {
            None
        } else {
            Some(metrics(&model, &val_bundles, config.threshold)?)
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_bundles.len() as f64,
            train_acc,
            val_acc: val.as_ref().map(|m| m.accuracy),
            val_auc: val.as_ref().and_then(|m| m.auc),
            val_f1: val.as_ref().map(|m| m.f1),
        };
        let score = record.val_auc.or(record.val_acc).unwrap_or(train_acc);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, model.clone()));
        }
        on_epoch(&record);
        history.push(record);
        epoch_seconds.push(start.elapsed().as_secs_f64());
    }
    let (_, best_epoch, best_model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best: best_model,
        best_epoch,
        last: model,
        history,
        epoch_seconds,
        class_weight: w_c,
    })
}

/// History as JSON lines.
pub fn history_jsonl(history: &[EpochRecord]) -> String {
    history
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}
