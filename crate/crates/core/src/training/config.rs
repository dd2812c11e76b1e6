//! Training hyperparameters and the per-dataset presets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::FeatureMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Pie,
    JaadBeh,
    JaadAll,
    Synthetic,
}

impl Profile {
    pub const ALL: [Profile; 4] = [Profile::Pie, Profile::JaadBeh, Profile::JaadAll, Profile::Synthetic];

    pub fn name(self) -> &'static str {
        match self {
            Profile::Pie => "pie",
            Profile::JaadBeh => "jaad_beh",
            Profile::JaadAll => "jaad_all",
            Profile::Synthetic => "synthetic",
        }
    }

    /// Input channels used by default under this profile.
    pub fn default_mask(self) -> FeatureMask {
        match self {
            Profile::JaadBeh => FeatureMask::new(true, true, false, false),
            _ => FeatureMask::ALL,
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Profile::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown profile {s:?}; expected pie, jaad_beh, jaad_all or synthetic")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Adam with L2 weight decay folded into the gradient.
    Adam,
    /// Adam with decoupled weight decay.
    #[serde(rename = "adamw")]
    AdamW,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub profile: Profile,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    /// Backbone rate; pairs with `seq_encoder_lr`, excludes `unified_lr`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backbone_lr: Option<f64>,
    /// Rate for the sequence encoder and the fusion head.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq_encoder_lr: Option<f64>,
    /// Single rate for every non-shift parameter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unified_lr: Option<f64>,
    /// Absolute rate for shift offsets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift_lr: Option<f64>,
    /// Shift offsets train at `shift_multiplier ·` the backbone (or unified) rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift_multiplier: Option<f64>,
    pub weight_decay: f64,
    pub seed: u64,
    /// Overrides the class weight computed from the training split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_weight: Option<f64>,
    /// Decision threshold on the crossing probability.
    pub threshold: f64,
}

impl TrainConfig {
    pub fn profile(profile: Profile) -> Self {
        let base = TrainConfig {
            profile,
            batch_size: 8,
            epochs: 60,
            optimizer: OptimizerKind::AdamW,
            backbone_lr: None,
            seq_encoder_lr: None,
            unified_lr: None,
            shift_lr: None,
            shift_multiplier: None,
            weight_decay: 0.0,
            seed: 0,
            class_weight: None,
            threshold: 0.5,
        };
        match profile {
            Profile::Pie => TrainConfig {
                optimizer: OptimizerKind::Adam,
                backbone_lr: Some(1.1e-3),
                seq_encoder_lr: Some(4.3e-3),
                shift_lr: Some(6.5e-4),
                ..base
            },
            Profile::JaadBeh => TrainConfig {
                unified_lr: Some(1e-4),
                shift_lr: Some(1e-5),
                weight_decay: 1e-3,
                ..base
            },
            Profile::JaadAll => TrainConfig {
                unified_lr: Some(3e-4),
                shift_lr: Some(1e-5),
                weight_decay: 1e-4,
                ..base
            },
            Profile::Synthetic => TrainConfig {
                unified_lr: Some(3e-4),
                weight_decay: 1e-4,
                epochs: 30,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rate = |name: &str, v: Option<f64>| -> Result<()> {
            match v {
                Some(x) if !(x.is_finite() && x >= 0.0) => Err(Error::Config(format!("{name} must be finite and >= 0, got {x}"))),
                _ => Ok(()),
            }
        };
        rate("backbone_lr", self.backbone_lr)?;
        rate("seq_encoder_lr", self.seq_encoder_lr)?;
        rate("unified_lr", self.unified_lr)?;
        rate("shift_lr", self.shift_lr)?;
        rate("shift_multiplier", self.shift_multiplier)?;
        match (self.unified_lr, self.backbone_lr, self.seq_encoder_lr) {
            (Some(_), None, None) | (None, Some(_), Some(_)) => {}
            _ => {
                return Err(Error::Config(
                    "specify either unified_lr or both backbone_lr and seq_encoder_lr".into(),
                ))
            }
        }
        if self.shift_lr.is_some() && self.shift_multiplier.is_some() {
            return Err(Error::Config("shift_lr and shift_multiplier are mutually exclusive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be finite and >= 0".into()));
        }
        if let Some(w) = self.class_weight {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Config("class_weight must be positive".into()));
            }
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("threshold must be in (0, 1)".into()));
        }
        Ok(())
    }

    /// Rate for backbone parameters other than shifts.
    pub fn backbone_rate(&self) -> f64 {
        self.unified_lr.or(self.backbone_lr).unwrap_or(0.0)
    }

    /// Rate for the sequence encoder and the fusion head.
    pub fn head_rate(&self) -> f64 {
        self.unified_lr.or(self.seq_encoder_lr).unwrap_or(0.0)
    }

    pub fn shift_rate(&self) -> f64 {
        match (self.shift_lr, self.shift_multiplier) {
            (Some(lr), _) => lr,
            (None, Some(m)) => m * self.backbone_rate(),
            (None, None) => self.backbone_rate(),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::profile(Profile::Synthetic)
    }
}
