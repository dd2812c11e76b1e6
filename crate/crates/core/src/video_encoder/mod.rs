//! Shift-based video encoder over channel-stacked frame crops.
//!
//! The `(N·C)/2 × H × W` input is viewed as `T = N/2` frames of `C` channels.
//! A per-frame convolutional stem is followed by stages of shift blocks: every
//! block translates each channel in time and space by learned fractional offsets
//! and then mixes channels with a pointwise convolution, so temporal modelling
//! comes entirely from the shifts. Global average pooling and a linear layer
//! produce the feature vector.

mod shift;

use ndarray::{Array1, Array2, Array4, ArrayView1, ArrayView2, ArrayView3, ArrayView4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::conv::{relu4, relu4_backward};
use crate::nn::{avg_pool2, avg_pool2_backward, Conv2d, ConvCache, Grads, Init, Linear, ParamBuilder, ParamHandle, ParamRole, ParamSet};
use crate::preprocess::InputGeometry;
use crate::scalar::Scalar;

pub use shift::{learnable_shift, learnable_shift_backward, shift_stacked};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub channels: usize,
    pub blocks: usize,
}

/// How weights are initialized. Only random initialization is available;
/// no pretrained backbone weights are shipped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightInit {
    #[default]
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VideoEncoderConfig {
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    /// 2×2 average pooling after the stem.
    pub stem_pool: bool,
    /// 2×2 average pooling separates consecutive stages.
    pub stages: Vec<StageConfig>,
    pub feature_dim: usize,
    /// Shift offsets start uniform in `(-shift_init, shift_init)`.
    pub shift_init: f64,
    pub weight_init: WeightInit,
}

impl Default for VideoEncoderConfig {
    fn default() -> Self {
        VideoEncoderConfig {
            stem_channels: 32,
            stem_kernel: 3,
            stem_stride: 2,
            stem_pool: true,
            stages: vec![
                StageConfig { channels: 64, blocks: 2 },
                StageConfig { channels: 128, blocks: 2 },
                StageConfig { channels: 256, blocks: 2 },
            ],
            feature_dim: 128,
            shift_init: 0.5,
            weight_init: WeightInit::Random,
        }
    }
}

impl VideoEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.stem_channels == 0 || self.stem_kernel == 0 || self.stem_stride == 0 {
            return Err(Error::Config("video encoder dimensions must be positive".into()));
        }
        if self.stages.iter().any(|s| s.channels == 0 || s.blocks == 0) {
            return Err(Error::Config("every video stage needs positive channels and blocks".into()));
        }
        if !(self.shift_init.is_finite() && self.shift_init >= 0.0) {
            return Err(Error::Config("shift_init must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct ShiftBlock {
    offsets: ParamHandle,
    channels: usize,
    conv: Conv2d,
    residual: bool,
}

impl ShiftBlock {
    fn offsets<'p, T: Scalar>(&self, p: &'p ParamSet<T>) -> ArrayView2<'p, T> {
        ArrayView2::from_shape((self.channels, 3), p.get(self.offsets)).expect("offset layout")
    }
}

#[derive(Clone, Debug)]
pub struct VideoEncoder {
    frames: usize,
    in_channels: usize,
    height: usize,
    width: usize,
    stem: Conv2d,
    stem_pool: bool,
    stages: Vec<Vec<ShiftBlock>>,
    head: Linear,
}

struct BlockCache<T> {
    input: Array4<T>,
    conv: ConvCache<T>,
    pre: Array4<T>,
}

pub struct VideoCache<T> {
    stem: ConvCache<T>,
    stem_pre: Array4<T>,
    stem_pool_in: Option<(usize, usize, usize, usize)>,
    blocks: Vec<Vec<BlockCache<T>>>,
    stage_pool_in: Vec<(usize, usize, usize, usize)>,
    gap_in: (usize, usize, usize, usize),
    pooled: Array1<T>,
}

impl VideoEncoder {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, config: &VideoEncoderConfig, geometry: &InputGeometry) -> Result<Self> {
        config.validate()?;
        geometry.validate()?;
        b.set_role(ParamRole::Backbone);
        let stem = Conv2d::new(
            b,
            "video.stem",
            geometry.channels,
            config.stem_channels,
            config.stem_kernel,
            config.stem_stride,
            config.stem_kernel / 2,
        );
        let mut c_in = config.stem_channels;
        let mut stages = Vec::new();
        for (si, stage) in config.stages.iter().enumerate() {
            let mut blocks = Vec::new();
            for bi in 0..stage.blocks {
                let name = format!("video.stage{si}.block{bi}");
                let offsets = b.add_with_role(
                    format!("{name}.shift"),
                    &[c_in, 3],
                    Init::Uniform(config.shift_init),
                    ParamRole::Shift,
                );
                let conv = Conv2d::new(b, &format!("{name}.pointwise"), c_in, stage.channels, 1, 1, 0);
                blocks.push(ShiftBlock {
                    offsets,
                    channels: c_in,
                    conv,
                    residual: c_in == stage.channels,
                });
                c_in = stage.channels;
            }
            stages.push(blocks);
        }
        let head = Linear::new(b, "video.head", c_in, config.feature_dim);
        Ok(VideoEncoder {
            frames: geometry.video_frames(),
            in_channels: geometry.channels,
            height: geometry.height,
            width: geometry.width,
            stem,
            stem_pool: config.stem_pool,
            stages,
            head,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.head.out_dim
    }

    /// Expected input shape `((N·C)/2, H, W)`.
    pub fn input_shape(&self) -> (usize, usize, usize) {
        (self.frames * self.in_channels, self.height, self.width)
    }

    pub fn param_count(&self) -> usize {
        self.stem.param_count()
            + self
                .stages
                .iter()
                .flatten()
                .map(|b| 3 * b.channels + b.conv.param_count())
                .sum::<usize>()
            + self.head.param_count()
    }

    pub fn forward<T: Scalar>(&self, p: &ParamSet<T>, x: ArrayView3<T>) -> Result<(Array1<T>, VideoCache<T>)> {
        if x.dim() != self.input_shape() {
            return Err(Error::shape("video input", self.input_shape(), x.dim()));
        }
        let x4 = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((self.frames, self.in_channels, self.height, self.width))
            .expect("frame-major channels");
        let (stem_pre, stem_cache) = self.stem.forward(p, x4.view());
        let mut h = relu4(&stem_pre);
        let stem_pool_in = if self.stem_pool {
            let d = h.dim();
            h = avg_pool2(h.view());
            Some(d)
        } else {
            None
        };
        let mut block_caches = Vec::with_capacity(self.stages.len());
        let mut stage_pool_in = Vec::new();
        for (si, stage) in self.stages.iter().enumerate() {
            let mut caches = Vec::with_capacity(stage.len());
            for block in stage {
                let shifted = learnable_shift(h.view(), block.offsets(p))?;
                let (pre, conv) = block.conv.forward(p, shifted.view());
                let mut out = relu4(&pre);
                if block.residual {
                    out += &h;
                }
                caches.push(BlockCache { input: h, conv, pre });
                h = out;
            }
            block_caches.push(caches);
            if si + 1 < self.stages.len() {
                stage_pool_in.push(h.dim());
                h = avg_pool2(h.view());
            }
        }
        let gap_in = h.dim();
        let (t, c, hh, ww) = gap_in;
        if t * hh * ww == 0 {
            return Err(Error::shape("video feature map", "non-empty spatial extent", gap_in));
        }
        let pooled = h
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((c, t * hh * ww))
            .expect("gap layout")
            .mean_axis(Axis(1))
            .expect("non-empty");
        let feat = self.head.forward_vec(p, pooled.view());
        if feat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("video encoder output".into()));
        }
        Ok((
            feat,
            VideoCache {
                stem: stem_cache,
                stem_pre,
                stem_pool_in,
                blocks: block_caches,
                stage_pool_in,
                gap_in,
                pooled,
            },
        ))
    }

    pub fn backward<T: Scalar>(&self, p: &ParamSet<T>, cache: &VideoCache<T>, dfeat: ArrayView1<T>, g: &mut Grads<T>) -> Result<()> {
        let dpooled = self.head.backward_vec(p, cache.pooled.view(), dfeat, g);
        let (t, c, hh, ww) = cache.gap_in;
        let inv = T::one() / T::of((t * hh * ww) as f64);
        let mut dh = Array4::from_shape_fn(cache.gap_in, |(_, ci, _, _)| dpooled[ci] * inv);
        debug_assert_eq!(c, dpooled.len());
        for (si, stage) in self.stages.iter().enumerate().rev() {
            if si + 1 < self.stages.len() {
                dh = avg_pool2_backward(cache.stage_pool_in[si], dh.view());
            }
            for (block, bc) in stage.iter().zip(&cache.blocks[si]).rev() {
                let dpre = relu4_backward(&bc.pre, dh.view());
                let dshifted = block
                    .conv
                    .backward(p, &bc.conv, dpre.view(), g, true)
                    .expect("input gradient requested");
                let (dx, doff) = learnable_shift_backward(bc.input.view(), block.offsets(p), dshifted.view())?;
                crate::nn::layers::add_into(g.get_mut(block.offsets), doff.iter());
                if block.residual {
                    dh = dx + &dh;
                } else {
                    dh = dx;
                }
            }
        }
        if let Some(d) = cache.stem_pool_in {
            dh = avg_pool2_backward(d, dh.view());
        }
        let dstem = relu4_backward(&cache.stem_pre, dh.view());
        self.stem.backward(p, &cache.stem, dstem.view(), g, false);
        Ok(())
    }

    /// Batched inference: `B × (N·C)/2 × H × W` → `B × F`.
    pub fn forward_batch<T: Scalar>(&self, p: &ParamSet<T>, batch: ArrayView4<T>) -> Result<Array2<T>> {
        let (bsz, c, h, w) = batch.dim();
        if (c, h, w) != self.input_shape() {
            return Err(Error::shape("video batch", self.input_shape(), (c, h, w)));
        }
        let feats: Vec<Array1<T>> = (0..bsz)
            .into_par_iter()
            .map(|i| self.forward(p, batch.index_axis(Axis(0), i)).map(|(f, _)| f))
            .collect::<Result<_>>()?;
        let mut out = Array2::zeros((bsz, self.feature_dim()));
        for (i, f) in feats.iter().enumerate() {
            out.row_mut(i).assign(f);
        }
        Ok(out)
    }
}

/// A video encoder with its own parameters, for standalone use.
pub struct StandaloneVideoEncoder<T> {
    pub encoder: VideoEncoder,
    pub params: ParamSet<T>,
}

impl<T: Scalar> StandaloneVideoEncoder<T> {
    pub fn new(config: &VideoEncoderConfig, geometry: &InputGeometry, seed: u64) -> Result<Self> {
        let mut params = ParamSet::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = VideoEncoder::new(&mut ParamBuilder::new(&mut params, &mut rng, ParamRole::Backbone), config, geometry)?;
        Ok(StandaloneVideoEncoder { encoder, params })
    }

    pub fn forward_batch(&self, batch: ArrayView4<T>) -> Result<Array2<T>> {
        self.encoder.forward_batch(&self.params, batch)
    }
}

/// Exact trainable parameter count of a video encoder, shifts included.
pub fn count_parameters(config: &VideoEncoderConfig, geometry: &InputGeometry) -> Result<usize> {
    Ok(StandaloneVideoEncoder::<f32>::new(config, geometry, 0)?.params.len())
}
