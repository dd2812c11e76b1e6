//! Parameter groups and the Adam / AdamW update.

use std::ops::Range;

use serde::Serialize;

use super::config::{OptimizerKind, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{Grads, ParamRole, ParamSet, ParamSpec};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamGroup {
    pub name: String,
    pub lr: f64,
    /// Names of the tensors in the group.
    pub params: Vec<String>,
    #[serde(skip)]
    pub ranges: Vec<Range<usize>>,
}

impl ParamGroup {
    pub fn len(&self) -> usize {
        self.ranges.iter().map(|r| r.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn group(name: &str, lr: f64, specs: &[ParamSpec], pick: impl Fn(&ParamSpec) -> bool) -> ParamGroup {
    let chosen: Vec<&ParamSpec> = specs.iter().filter(|s| pick(s)).collect();
    ParamGroup {
        name: name.into(),
        lr,
        params: chosen.iter().map(|s| s.name.clone()).collect(),
        ranges: chosen.iter().map(|s| s.range()).collect(),
    }
}

/// Builds optimizer groups from parameter roles. Separate backbone and head rates
/// give up to three groups (backbone, shift, sequence encoder + fusion); a unified
/// rate gives one group, plus a shift group when shifts use their own rate.
/// Groups with no parameters are dropped.
pub fn make_param_groups(specs: &[ParamSpec], config: &TrainConfig) -> Result<Vec<ParamGroup>> {
    config.validate()?;
    let shift = config.shift_rate();
    let groups = if config.unified_lr.is_some() {
        let lr = config.backbone_rate();
        if shift == lr {
            vec![group("all", lr, specs, |_| true)]
        } else {
            vec![
                group("shift", shift, specs, |s| s.role == ParamRole::Shift),
                group("all_but_shift", lr, specs, |s| s.role != ParamRole::Shift),
            ]
        }
    } else {
        vec![
            group("backbone", config.backbone_rate(), specs, |s| s.role == ParamRole::Backbone),
            group("shift", shift, specs, |s| s.role == ParamRole::Shift),
            group("seq_encoder_fusion", config.head_rate(), specs, |s| {
                matches!(s.role, ParamRole::SeqEncoder | ParamRole::Fusion)
            }),
        ]
    };
    let groups: Vec<ParamGroup> = groups.into_iter().filter(|g| !g.params.is_empty()).collect();
    check_partition(&groups, specs)?;
    Ok(groups)
}

/// Every parameter must belong to exactly one group.
pub fn check_partition(groups: &[ParamGroup], specs: &[ParamSpec]) -> Result<()> {
    let total: usize = specs.iter().map(|s| s.len()).sum();
    let mut owner: Vec<Option<usize>> = vec![None; total];
    for (gi, g) in groups.iter().enumerate() {
        for r in &g.ranges {
            for i in r.clone() {
                let slot = owner
                    .get_mut(i)
                    .ok_or_else(|| Error::Config(format!("group {} reaches past the parameter buffer", g.name)))?;
                if let Some(prev) = *slot {
                    return Err(Error::Config(format!(
                        "parameter index {i} is in groups {} and {}",
                        groups[prev].name, g.name
                    )));
                }
                *slot = Some(gi);
            }
        }
    }
    if let Some(i) = owner.iter().position(Option::is_none) {
        return Err(Error::Config(format!("parameter index {i} belongs to no group")));
    }
    Ok(())
}

/// Adam / AdamW with PyTorch defaults (β = (0.9, 0.999), ε = 1e-8).
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    groups: Vec<ParamGroup>,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<T>,
    v: Vec<T>,
    step: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, groups: Vec<ParamGroup>, weight_decay: f64, n_params: usize) -> Self {
        Optimizer {
            kind,
            groups,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            step: 0,
        }
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &Grads<T>) -> Result<()> {
        if grads.0.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::shape("gradient buffer", params.len(), grads.0.len()));
        }
        self.step += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let bc1 = T::one() - T::of(self.beta1.powi(self.step as i32));
        let bc2 = T::one() - T::of(self.beta2.powi(self.step as i32));
        let eps = T::of(self.eps);
        let wd = T::of(self.weight_decay);
        let values = params.values_mut();
        for g in &self.groups {
            let lr = T::of(g.lr);
            for r in &g.ranges {
                for i in r.clone() {
                    let mut grad = grads.0[i];
                    if self.kind == OptimizerKind::Adam {
                        grad += wd * values[i];
                    }
                    self.m[i] = b1 * self.m[i] + (T::one() - b1) * grad;
                    self.v[i] = b2 * self.v[i] + (T::one() - b2) * grad * grad;
                    if lr == T::zero() {
                        continue;
                    }
                    if self.kind == OptimizerKind::AdamW {
                        values[i] = values[i] - lr * wd * values[i];
                    }
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}
