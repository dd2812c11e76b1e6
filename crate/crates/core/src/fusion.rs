//! The full crossing-intention model: video and sequence branches feeding a
//! two-layer fusion head that emits one logit.

use ndarray::{concatenate, Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::FeatureMask;
use crate::nn::{Grads, Init, Linear, ParamBuilder, ParamHandle, ParamRole, ParamSet};
use crate::preprocess::{FeatureBundle, InputGeometry};
use crate::scalar::Scalar;
use crate::seq_encoder::{build_tokens, SeqCache, SeqEncoder, SeqEncoderConfig};
use crate::video_encoder::{VideoCache, VideoEncoder, VideoEncoderConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    #[default]
    Concat,
    /// Multiplicative attention with the sequence feature as query over
    /// `{video, sequence}`. Requires both branches and equal feature widths.
    LuongAttention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntFormerConfig {
    pub video: VideoEncoderConfig,
    pub seq: SeqEncoderConfig,
    pub input: InputGeometry,
    pub fusion_hidden: usize,
    pub dropout: f64,
    pub fusion: FusionMode,
    pub mask: FeatureMask,
}

impl Default for IntFormerConfig {
    fn default() -> Self {
        IntFormerConfig {
            video: VideoEncoderConfig::default(),
            seq: SeqEncoderConfig::default(),
            input: InputGeometry::default(),
            fusion_hidden: 128,
            dropout: 0.5,
            fusion: FusionMode::Concat,
            mask: FeatureMask::ALL,
        }
    }
}

impl IntFormerConfig {
    /// Reduced widths and 32×32 crops for CPU-scale experiments on synthetic data.
    pub fn compact() -> Self {
        IntFormerConfig {
            video: VideoEncoderConfig {
                stem_channels: 16,
                stages: vec![
                    crate::video_encoder::StageConfig { channels: 32, blocks: 1 },
                    crate::video_encoder::StageConfig { channels: 64, blocks: 1 },
                ],
                feature_dim: 64,
                ..VideoEncoderConfig::default()
            },
            seq: SeqEncoderConfig {
                d_model: 32,
                layers: 1,
                heads: 4,
                ff_dim: 64,
                output_dim: 64,
                positional_encoding: true,
            },
            input: InputGeometry {
                height: 32,
                width: 32,
                ..InputGeometry::default()
            },
            fusion_hidden: 64,
            ..IntFormerConfig::default()
        }
    }

    pub fn with_mask(self, mask: FeatureMask) -> Self {
        IntFormerConfig { mask, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        self.mask.validate()?;
        self.input.validate()?;
        if self.mask.images {
            self.video.validate()?;
        }
        if self.mask.any_sequence() {
            self.seq.validate()?;
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.fusion_hidden == 0 {
            return Err(Error::Config("fusion_hidden must be positive".into()));
        }
        if self.fusion == FusionMode::LuongAttention {
            if !(self.mask.images && self.mask.any_sequence()) {
                return Err(Error::Config(
                    "attention fusion needs both the image and a non-image branch; use fusion = \"concat\"".into(),
                ));
            }
            if self.video.feature_dim != self.seq.output_dim {
                return Err(Error::Config(format!(
                    "attention fusion needs equal branch widths, got {} and {}",
                    self.video.feature_dim, self.seq.output_dim
                )));
            }
        }
        Ok(())
    }

    /// Width of the first fusion layer input.
    pub fn head_input_dim(&self) -> usize {
        let v = if self.mask.images { self.video.feature_dim } else { 0 };
        let s = if self.mask.any_sequence() { self.seq.output_dim } else { 0 };
        match self.fusion {
            FusionMode::Concat => v + s,
            FusionMode::LuongAttention => v,
        }
    }
}

#[derive(Clone, Debug)]
struct FusionHead {
    score: Option<ParamHandle>,
    dim: usize,
    fc1: Linear,
    fc2: Linear,
}

struct HeadCache<T> {
    v: Option<Array1<T>>,
    s: Option<Array1<T>>,
    alpha: Option<[T; 2]>,
    input: Array1<T>,
    keep: Option<Array1<T>>,
    act: Array1<T>,
}

/// Intermediate values of one training-mode forward pass.
pub struct ModelCache<T> {
    video: Option<VideoCache<T>>,
    seq: Option<SeqCache<T>>,
    head: HeadCache<T>,
}

impl<T> ModelCache<T> {
    /// Luong mixing weights over `(video, sequence)`, in attention mode.
    pub fn attention_weights(&self) -> Option<[T; 2]>
    where
        T: Copy,
    {
        self.head.alpha
    }
}

/// Luong "general" scores of `s` against `(v, s)` and their softmax.
fn luong_weights<T: Scalar>(w: ndarray::ArrayView2<T>, v: ArrayView1<T>, s: ArrayView1<T>) -> [T; 2] {
    let ws = w.t().dot(&s);
    let ev = ws.dot(&v);
    let es = ws.dot(&s);
    let m = ev.max(es);
    let (a, b) = ((ev - m).exp(), (es - m).exp());
    [a / (a + b), b / (a + b)]
}

/// IntFormer with its parameters.
#[derive(Clone, Debug)]
pub struct IntFormer<T> {
    config: IntFormerConfig,
    video: Option<VideoEncoder>,
    seq: Option<SeqEncoder>,
    head: FusionHead,
    params: ParamSet<T>,
}

impl<T: Scalar> IntFormer<T> {
    pub fn new(config: IntFormerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ParamBuilder::new(&mut params, &mut rng, ParamRole::Backbone);
        let video = if config.mask.images {
            Some(VideoEncoder::new(&mut b, &config.video, &config.input)?)
        } else {
            None
        };
        let seq = if config.mask.any_sequence() {
            Some(SeqEncoder::new(&mut b, &config.seq, config.mask.token_width(config.input.pose_dim))?)
        } else {
            None
        };
        b.set_role(ParamRole::Fusion);
        let in_dim = config.head_input_dim();
        let score = (config.fusion == FusionMode::LuongAttention).then(|| {
            let bound = 1.0 / (in_dim as f64).sqrt();
            b.add("fusion.score", &[in_dim, in_dim], Init::Uniform(bound))
        });
        let fc1 = Linear::new(&mut b, "fusion.fc1", in_dim, config.fusion_hidden);
        let fc2 = Linear::new(&mut b, "fusion.fc2", config.fusion_hidden, 1);
        Ok(IntFormer {
            head: FusionHead { score, dim: in_dim, fc1, fc2 },
            config,
            video,
            seq,
            params,
        })
    }

    /// Reassembles a model from stored parameters; the layout must match `config`.
    pub fn from_params(config: IntFormerConfig, params: ParamSet<T>) -> Result<Self> {
        let mut model = IntFormer::<T>::new(config, 0)?;
        if model.params.specs() != params.specs() {
            return Err(Error::Checkpoint("parameter layout does not match the model configuration".into()));
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &IntFormerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn video_encoder(&self) -> Option<&VideoEncoder> {
        self.video.as_ref()
    }

    pub fn seq_encoder(&self) -> Option<&SeqEncoder> {
        self.seq.as_ref()
    }

    /// First and second fusion layers.
    pub fn head_layers(&self) -> (&Linear, &Linear) {
        (&self.head.fc1, &self.head.fc2)
    }

    pub fn score_matrix(&self) -> Option<ParamHandle> {
        self.head.score
    }

    fn check_bundle(&self, bundle: &FeatureBundle<T>) -> Result<()> {
        if bundle.mask != self.config.mask {
            return Err(Error::Config(format!(
                "feature mask mismatch: model uses {} but bundle has {}",
                self.config.mask, bundle.mask
            )));
        }
        Ok(())
    }

    /// Inference logit (dropout off). Apply a sigmoid for the crossing probability.
    pub fn forward(&self, bundle: &FeatureBundle<T>) -> Result<T> {
        Ok(self.run(bundle, None)?.0)
    }

    pub fn forward_batch(&self, bundles: &[FeatureBundle<T>]) -> Result<Vec<T>> {
        bundles.par_iter().map(|b| self.forward(b)).collect()
    }

    /// Training-mode pass with dropout drawn from `dropout_seed`.
    pub fn forward_train(&self, bundle: &FeatureBundle<T>, dropout_seed: u64) -> Result<(T, ModelCache<T>)> {
        self.run(bundle, Some(dropout_seed))
    }

    /// Eval-mode pass that also returns the cache, for gradient checks.
    pub fn forward_with_cache(&self, bundle: &FeatureBundle<T>) -> Result<(T, ModelCache<T>)> {
        self.run(bundle, None)
    }

    fn run(&self, bundle: &FeatureBundle<T>, dropout_seed: Option<u64>) -> Result<(T, ModelCache<T>)> {
        self.check_bundle(bundle)?;
        let p = &self.params;
        let (v, video_cache) = match &self.video {
            Some(enc) => {
                let stack = bundle
                    .video_stack
                    .as_ref()
                    .ok_or_else(|| Error::Config("image branch active but bundle has no video stack".into()))?;
                let (f, c) = enc.forward(p, stack.view())?;
                (Some(f), Some(c))
            }
            None => (None, None),
        };
        let (s, seq_cache) = match &self.seq {
            Some(enc) => {
                let tokens = build_tokens(
                    bundle.box_seq.as_ref().map(|a| a.view()),
                    bundle.pose_seq.as_ref().map(|a| a.view()),
                    bundle.speed_seq.as_ref().map(|a| a.view()),
                )?;
                let (f, c) = enc.forward(p, tokens.view())?;
                (Some(f), Some(c))
            }
            None => (None, None),
        };
        let (alpha, input) = match (self.head.score, &v, &s) {
            (Some(w), Some(v), Some(s)) => {
                let w = self.score_view(w);
                let a = luong_weights(w, v.view(), s.view());
                (Some(a), v * a[0] + s * a[1])
            }
            (Some(_), _, _) => return Err(Error::Config("attention fusion needs both branches".into())),
            (None, _, _) => {
                let parts: Vec<ArrayView1<T>> = [v.as_ref(), s.as_ref()].into_iter().flatten().map(|a| a.view()).collect();
                if parts.is_empty() {
                    return Err(Error::Config("no branch produced a feature".into()));
                }
                (None, concatenate(Axis(0), &parts).expect("1-d features"))
            }
        };
        let pre = self.head.fc1.forward_vec(p, input.view());
        let keep = match dropout_seed {
            Some(seed) if self.config.dropout > 0.0 => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let scale = T::of(1.0 / (1.0 - self.config.dropout));
                Some(Array1::from_shape_fn(pre.len(), |_| {
                    if rng.random_bool(self.config.dropout) {
                        T::zero()
                    } else {
                        scale
                    }
                }))
            }
            _ => None,
        };
        let dropped = match &keep {
            Some(k) => pre * k,
            None => pre,
        };
        let act = dropped.mapv(|x| if x > T::zero() { x } else { T::zero() });
        let logit = self.head.fc2.forward_vec(p, act.view())[0];
        if !logit.is_finite() {
            return Err(Error::NonFinite("model logit".into()));
        }
        Ok((
            logit,
            ModelCache {
                video: video_cache,
                seq: seq_cache,
                head: HeadCache {
                    v,
                    s,
                    alpha,
                    input,
                    keep,
                    act,
                },
            },
        ))
    }

    fn score_view(&self, h: ParamHandle) -> ndarray::ArrayView2<'_, T> {
        ndarray::ArrayView2::from_shape((self.head.dim, self.head.dim), self.params.get(h)).expect("score layout")
    }

    /// Accumulates `dlogit · ∂logit/∂θ` into `g`.
    pub fn backward(&self, cache: &ModelCache<T>, dlogit: T, g: &mut Grads<T>) -> Result<()> {
        let p = &self.params;
        let h = &cache.head;
        let dact = self
            .head
            .fc2
            .backward_vec(p, h.act.view(), Array1::from_elem(1, dlogit).view(), g);
        let mut dpre = dact;
        dpre.zip_mut_with(&h.act, |d, &a| {
            if a <= T::zero() {
                *d = T::zero();
            }
        });
        if let Some(k) = &h.keep {
            dpre *= k;
        }
        let dinput = self.head.fc1.backward_vec(p, h.input.view(), dpre.view(), g);

        let (dv, ds) = match (self.head.score, &h.v, &h.s, h.alpha) {
            (Some(wh), Some(v), Some(s), Some(alpha)) => {
                let w = self.score_view(wh);
                let da = [dinput.dot(v), dinput.dot(s)];
                let mean = alpha[0] * da[0] + alpha[1] * da[1];
                let de = [alpha[0] * (da[0] - mean), alpha[1] * (da[1] - mean)];
                let wv = w.dot(v);
                let ws = w.dot(s);
                let wts = w.t().dot(s);
                let dv = &dinput * alpha[0] + &wts * de[0];
                let ds = &dinput * alpha[1] + &wv * de[0] + (&ws + &wts) * de[1];
                let s2 = s.view().insert_axis(Axis(1));
                let dw = s2.dot(&v.view().insert_axis(Axis(0))) * de[0] + s2.dot(&s.view().insert_axis(Axis(0))) * de[1];
                crate::nn::layers::add_into(g.get_mut(wh), dw.iter());
                (Some(dv), Some(ds))
            }
            _ => {
                let nv = h.v.as_ref().map_or(0, |a| a.len());
                let dv = h.v.as_ref().map(|_| dinput.slice(ndarray::s![..nv]).to_owned());
                let ds = h.s.as_ref().map(|_| dinput.slice(ndarray::s![nv..]).to_owned());
                (dv, ds)
            }
        };
        if let (Some(enc), Some(c), Some(d)) = (&self.video, &cache.video, dv) {
            enc.backward(p, c, d.view(), g)?;
        }
        if let (Some(enc), Some(c), Some(d)) = (&self.seq, &cache.seq, ds) {
            enc.backward(p, c, d.view(), g);
        }
        Ok(())
    }
}

/// Stacks per-sample rows into a batch matrix.
pub fn stack_rows<T: Scalar>(rows: &[Array1<T>]) -> Array2<T> {
    let views: Vec<_> = rows.iter().map(|r| r.view().insert_axis(Axis(0))).collect();
    concatenate(Axis(0), &views).expect("equal widths")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video_encoder::StageConfig;
    use ndarray::Array3;

    fn small_config(mask: FeatureMask) -> IntFormerConfig {
        IntFormerConfig {
            video: VideoEncoderConfig {
                stem_channels: 4,
                stages: vec![StageConfig { channels: 6, blocks: 1 }, StageConfig { channels: 8, blocks: 1 }],
                feature_dim: 8,
                ..VideoEncoderConfig::default()
            },
            seq: SeqEncoderConfig {
                d_model: 8,
                layers: 1,
                heads: 2,
                ff_dim: 8,
                output_dim: 8,
                positional_encoding: true,
            },
            input: InputGeometry {
                height: 8,
                width: 8,
                pose_dim: 6,
                ..InputGeometry::default()
            },
            fusion_hidden: 6,
            mask,
            ..IntFormerConfig::default()
        }
    }

    fn bundle(config: &IntFormerConfig, seed: u64) -> FeatureBundle<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = &config.input;
        let m = config.mask;
        let mut r = |d: (usize, usize)| Some(Array2::from_shape_fn(d, |_| rng.random_range(-1.0..1.0)));
        let box_seq = if m.boxes { r((g.obs_len, 4)) } else { None };
        let pose_seq = if m.pose { r((g.obs_len, g.pose_dim)) } else { None };
        let speed_seq = if m.speed { r((g.obs_len, 1)) } else { None };
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let video_stack = m
            .images
            .then(|| Array3::from_shape_fn((g.video_channels(), g.height, g.width), |_| rng.random_range(0.0..1.0)));
        FeatureBundle {
            video_stack,
            box_seq,
            pose_seq,
            speed_seq,
            label: 1,
            mask: m,
        }
    }

    #[test]
    fn default_head_input_width() {
        let c = IntFormerConfig::default();
        assert_eq!(c.head_input_dim(), 256);
        let speed = IntFormerConfig {
            mask: FeatureMask::new(false, false, false, true),
            ..IntFormerConfig::default()
        };
        assert_eq!(speed.head_input_dim(), 128);
    }

    #[test]
    fn rejects_invalid_configs() {
        let mut c = small_config(FeatureMask::new(false, false, false, false));
        assert!(IntFormer::<f64>::new(c.clone(), 0).is_err());
        c.mask = FeatureMask::ALL;
        c.dropout = 1.0;
        assert!(IntFormer::<f64>::new(c.clone(), 0).is_err());
        c.dropout = 0.5;
        c.fusion = FusionMode::LuongAttention;
        c.mask = FeatureMask::new(false, true, false, false);
        let err = IntFormer::<f64>::new(c, 0).unwrap_err().to_string();
        assert!(err.contains("concat"), "{err}");
    }

    #[test]
    fn branch_variants_produce_finite_logits() {
        for mask in [
            FeatureMask::new(false, false, false, true),
            FeatureMask::new(true, false, false, false),
            FeatureMask::ALL,
        ] {
            let c = small_config(mask);
            let m = IntFormer::<f64>::new(c.clone(), 1).unwrap();
            assert_eq!(m.video_encoder().is_some(), mask.images);
            assert_eq!(m.seq_encoder().is_some(), mask.any_sequence());
            let bundles: Vec<_> = (0..8).map(|i| bundle(&c, i)).collect();
            let logits = m.forward_batch(&bundles).unwrap();
            assert_eq!(logits.len(), 8);
            assert!(logits.iter().all(|l| l.is_finite()));
        }
    }

    #[test]
    fn mask_mismatch_is_an_error() {
        let c = small_config(FeatureMask::ALL);
        let m = IntFormer::<f64>::new(c, 1).unwrap();
        let other = bundle(&small_config(FeatureMask::new(false, true, false, false)), 1);
        assert!(m.forward(&other).unwrap_err().to_string().contains("mismatch"));
    }

    #[test]
    fn eval_mode_is_bitwise_stable() {
        let c = small_config(FeatureMask::ALL);
        let m = IntFormer::<f32>::new(c.clone(), 2).unwrap();
        let b64 = bundle(&c, 3);
        let b = FeatureBundle {
            video_stack: b64.video_stack.map(|a| a.mapv(|v| v as f32)),
            box_seq: b64.box_seq.map(|a| a.mapv(|v| v as f32)),
            pose_seq: b64.pose_seq.map(|a| a.mapv(|v| v as f32)),
            speed_seq: b64.speed_seq.map(|a| a.mapv(|v| v as f32)),
            label: 1,
            mask: c.mask,
        };
        let a = m.forward(&b).unwrap();
        for _ in 0..5 {
            assert_eq!(m.forward(&b).unwrap().to_bits(), a.to_bits());
        }
    }

    #[test]
    fn zero_first_layer_yields_second_bias() {
        let c = small_config(FeatureMask::ALL);
        let mut m = IntFormer::<f64>::new(c.clone(), 4).unwrap();
        let (fc1, fc2) = m.head_layers();
        let (w1, b1, b2) = (fc1.weight_handle(), fc1.bias_handle(), fc2.bias_handle());
        m.params_mut().get_mut(w1).fill(0.0);
        m.params_mut().get_mut(b1).fill(0.0);
        let bias = m.params().get(b2)[0];
        for s in 0..3 {
            assert_eq!(m.forward(&bundle(&c, s)).unwrap(), bias);
        }
    }

    #[test]
    fn masked_images_cannot_affect_logit() {
        let c = small_config(FeatureMask::new(false, true, true, true));
        let m = IntFormer::<f64>::new(c.clone(), 5).unwrap();
        let mut b = bundle(&c, 6);
        let base = m.forward(&b).unwrap();
        b.video_stack = Some(Array3::from_elem((24, 8, 8), 0.9));
        assert_eq!(m.forward(&b).unwrap(), base);
    }

    #[test]
    fn luong_weights_are_a_distribution() {
        let w = Array2::<f64>::eye(3);
        let v = ndarray::arr1(&[0.3, -0.2, 0.5]);
        let a = luong_weights(w.view(), v.view(), v.view());
        assert!((a[0] - 0.5).abs() < 1e-12 && (a[1] - 0.5).abs() < 1e-12);
        let s = ndarray::arr1(&[1.0, 2.0, -1.0]);
        let a = luong_weights(w.view(), v.view(), s.view());
        assert!((a[0] + a[1] - 1.0).abs() < 1e-12);

        let mut c = small_config(FeatureMask::ALL);
        c.fusion = FusionMode::LuongAttention;
        let m = IntFormer::<f64>::new(c.clone(), 7).unwrap();
        let (logit, cache) = m.forward_with_cache(&bundle(&c, 1)).unwrap();
        assert!(logit.is_finite());
        let a = cache.attention_weights().unwrap();
        assert!((a[0] + a[1] - 1.0).abs() < 1e-6);
    }

    fn check_gradients(c: IntFormerConfig, seed: u64) {
        let mut m = IntFormer::<f64>::new(c.clone(), seed).unwrap();
        let b = bundle(&c, seed + 1);
        let (_, cache) = m.forward_with_cache(&b).unwrap();
        let mut g = m.params().zero_grads();
        m.backward(&cache, 1.0, &mut g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
        let h = 1e-6;
        let specs = m.params().specs().to_vec();
        for _ in 0..25 {
            let spec = &specs[rng.random_range(0..specs.len())];
            let idx = spec.offset + rng.random_range(0..spec.len());
            let orig = m.params().values()[idx];
            m.params_mut().values_mut()[idx] = orig + h;
            let lp = m.forward(&b).unwrap();
            m.params_mut().values_mut()[idx] = orig - h;
            let lm = m.forward(&b).unwrap();
            m.params_mut().values_mut()[idx] = orig;
            let num = (lp - lm) / (2.0 * h);
            let ana = g.0[idx];
            let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-5);
            assert!(rel < 1e-3, "{}: numeric {num} analytic {ana}", spec.name);
        }
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        check_gradients(small_config(FeatureMask::ALL), 10);
        let mut c = small_config(FeatureMask::ALL);
        c.fusion = FusionMode::LuongAttention;
        check_gradients(c, 20);
    }

    #[test]
    fn training_dropout_is_seeded() {
        let c = small_config(FeatureMask::new(false, true, false, true));
        let m = IntFormer::<f64>::new(c.clone(), 8).unwrap();
        let b = bundle(&c, 2);
        let (a, _) = m.forward_train(&b, 42).unwrap();
        let (a2, _) = m.forward_train(&b, 42).unwrap();
        assert_eq!(a, a2);
        let differs = (0..20).any(|s| m.forward_train(&b, s).unwrap().0 != a);
        assert!(differs);
    }
}
