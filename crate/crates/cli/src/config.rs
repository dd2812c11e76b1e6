//! Experiment configuration: a TOML document layered over the profile presets.
//!
//! Resolution order, lowest to highest: profile preset, config file, flags.
//! Relative paths in a config file are taken relative to the file.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use intformer::dataset::{LoadOptions, SignalSpec, SplitRatios, WindowOptions};
use intformer::evaluation::ThroughputOptions;
use intformer::training::{Profile, TrainConfig};
use intformer::{FeatureMask, IntFormerConfig};

/// Fallback for `data.frames_root`.
pub const FRAMES_ROOT_ENV: &str = "INTFORMER_FRAMES_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSize {
    Full,
    Compact,
}

impl ModelSize {
    pub fn base(self) -> IntFormerConfig {
        match self {
            ModelSize::Full => IntFormerConfig::default(),
            ModelSize::Compact => IntFormerConfig::compact(),
        }
    }

    pub fn default_for(profile: Profile) -> Self {
        match profile {
            Profile::Synthetic => ModelSize::Compact,
            _ => ModelSize::Full,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
    /// Frames as `<root>/<video_id>/<frame:06>.png`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames_root: Option<PathBuf>,
    pub split: SplitRatios,
    pub windows: WindowOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub tracks: usize,
    pub signal: SignalSpec,
    /// Size of the stored PNG frames; boxes stay in full-frame pixels.
    pub frame_width: u32,
    pub frame_height: u32,
    /// Render the frames that observation windows reference.
    pub frames: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            tracks: 200,
            signal: SignalSpec::default(),
            frame_width: 240,
            frame_height: 135,
            frames: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    /// Masks as letter codes: `I` images, `B` boxes, `P` pose, `S` speed.
    pub masks: Vec<String>,
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            masks: FeatureMask::importance_study().iter().map(ToString::to_string).collect(),
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub split: Partition,
    pub measure_throughput: bool,
    pub throughput: ThroughputOptions,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            split: Partition::Test,
            measure_throughput: true,
            throughput: ThroughputOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    /// Drives the video split, model initialization, shuffling and dropout.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub model_size: ModelSize,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub model: IntFormerConfig,
    pub synth: SynthConfig,
    pub ablation: AblationConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn preset(profile: Profile, size: ModelSize) -> Self {
        ExperimentConfig {
            profile,
            seed: 0,
            out_dir: PathBuf::from("out"),
            model_size: size,
            data: DataConfig {
                annotations: None,
                frames_root: None,
                split: SplitRatios::default(),
                windows: WindowOptions::default(),
            },
            train: TrainConfig::profile(profile),
            model: size.base().with_mask(profile.default_mask()),
            synth: SynthConfig::default(),
            ablation: AblationConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate().context("[train]")?;
        self.model.validate().context("[model]")?;
        self.data.split.validate().context("[data.split]")?;
        self.data.windows.validate().context("[data.windows]")?;
        if self.data.windows.obs_len != self.model.input.obs_len {
            bail!(
                "data.windows.obs_len ({}) must equal model.input.obs_len ({})",
                self.data.windows.obs_len,
                self.model.input.obs_len
            );
        }
        self.synth.signal.validate().context("[synth.signal]")?;
        if self.synth.tracks == 0 {
            bail!("synth.tracks must be positive");
        }
        if self.synth.frame_width == 0 || self.synth.frame_height == 0 {
            bail!("synth frame size must be positive");
        }
        if self.synth.signal.pose_dim != self.model.input.pose_dim {
            bail!(
                "synth.signal.pose_dim ({}) must equal model.input.pose_dim ({})",
                self.synth.signal.pose_dim,
                self.model.input.pose_dim
            );
        }
        self.ablation_masks()?;
        if self.ablation.seeds.is_empty() {
            bail!("ablation.seeds must not be empty");
        }
        let t = &self.eval.throughput;
        if t.batch_size == 0 || t.trials == 0 {
            bail!("eval.throughput batch_size and trials must be positive");
        }
        Ok(())
    }

    pub fn ablation_masks(&self) -> Result<Vec<FeatureMask>> {
        if self.ablation.masks.is_empty() {
            bail!("ablation.masks must not be empty");
        }
        self.ablation
            .masks
            .iter()
            .map(|m| {
                let mask = FeatureMask::from_str(m).with_context(|| format!("ablation mask {m:?}"))?;
                mask.validate().with_context(|| format!("ablation mask {m:?}"))?;
                Ok(mask)
            })
            .collect()
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            pose_dim: self.model.input.pose_dim,
            image_width: self.model.input.image_width,
            image_height: self.model.input.image_height,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing configuration")
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub profile: Option<Profile>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub masks: Option<Vec<String>>,
}

const PATH_KEYS: [&[&str]; 3] = [&["out_dir"], &["data", "annotations"], &["data", "frames_root"]];
const RATE_KEYS: [&str; 3] = ["unified_lr", "backbone_lr", "seq_encoder_lr"];
const SHIFT_KEYS: [&str; 2] = ["shift_lr", "shift_multiplier"];

/// Reads a TOML config, or the `config` object of a JSON run manifest.
pub fn read_document(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        let mut json: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(inner) = json.get_mut("config") {
            json = inner.take();
        }
        return serde_json::from_value(json).with_context(|| format!("{} is not a configuration object", path.display()));
    }
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn lookup_mut<'a>(table: &'a mut Table, key: &[&str]) -> Option<&'a mut Value> {
    let (last, parents) = key.split_last()?;
    let mut t = table;
    for k in parents {
        t = t.get_mut(*k)?.as_table_mut()?;
    }
    t.get_mut(*last)
}

fn absolutize(table: &mut Table, base: &Path) {
    for key in PATH_KEYS {
        if let Some(Value::String(s)) = lookup_mut(table, key) {
            let p = Path::new(s.as_str());
            if p.is_relative() {
                *s = base.join(p).to_string_lossy().into_owned();
            }
        }
    }
}

/// Recursive merge; tables merge key by key, anything else is replaced.
pub fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// A file that sets any learning-rate key replaces the preset's rate scheme
/// instead of being merged into it.
fn clear_overridden_rates(base: &mut Table, file: &Table) {
    let (Some(Value::Table(ft)), Some(Value::Table(bt))) = (file.get("train"), base.get_mut("train")) else {
        return;
    };
    for keys in [&RATE_KEYS[..], &SHIFT_KEYS[..]] {
        if keys.iter().any(|k| ft.contains_key(*k)) {
            for k in keys {
                bt.remove(*k);
            }
        }
    }
}

pub fn resolve(path: Option<&Path>, ov: &Overrides) -> Result<ExperimentConfig> {
    let mut file = match path {
        Some(p) => {
            let mut t = read_document(p)?;
            let dir = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
            let dir = std::path::absolute(dir).with_context(|| format!("resolving {}", dir.display()))?;
            absolutize(&mut t, &dir);
            t
        }
        None => Table::new(),
    };
    // [train] may repeat the top-level profile and seed (as resolved configs do) but not differ.
    let top: Vec<Option<Value>> = ["profile", "seed"].iter().map(|k| file.get(*k).cloned()).collect();
    if let Some(Value::Table(t)) = file.get_mut("train") {
        for (k, top) in ["profile", "seed"].into_iter().zip(top) {
            if let Some(v) = t.remove(k) {
                if Some(&v) != top.as_ref() {
                    bail!("`train.{k}` differs from the top-level `{k}`; set it at the top level only");
                }
            }
        }
    }
    let profile = match (ov.profile, file.get("profile")) {
        (Some(p), _) => p,
        (None, Some(v)) => {
            let s = v.as_str().context("`profile` must be a string")?;
            Profile::from_str(s)?
        }
        (None, None) => Profile::Synthetic,
    };
    let size = match file.get("model_size") {
        Some(v) => v.clone().try_into().context("`model_size` must be \"full\" or \"compact\"")?,
        None => ModelSize::default_for(profile),
    };
    file.insert("profile".into(), Value::String(profile.name().into()));

    let mut table = Table::try_from(ExperimentConfig::preset(profile, size)).context("serializing preset")?;
    clear_overridden_rates(&mut table, &file);
    merge(&mut table, file);
    let mut cfg: ExperimentConfig = Value::Table(table).try_into().context("invalid configuration")?;

    if let Some(seed) = ov.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &ov.out {
        cfg.out_dir = out.clone();
    }
    if let Some(masks) = &ov.masks {
        cfg.ablation.masks = masks.clone();
    }
    cfg.train.profile = cfg.profile;
    cfg.train.seed = cfg.seed;
    if cfg.data.frames_root.is_none() {
        cfg.data.frames_root = std::env::var_os(FRAMES_ROOT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
    }
    cfg.validate()?;
    Ok(cfg)
}
