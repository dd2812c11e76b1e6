//! Transformer encoder over per-frame tokens built from boxes, pose and speed.

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::FeatureMask;
use crate::nn::{relu, relu_backward, Grads, LayerNorm, LayerNormCache, Linear, MhaCache, MultiHeadAttention, ParamBuilder, ParamRole, ParamSet};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeqEncoderConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub output_dim: usize,
    /// Adds sinusoidal position encodings to the projected tokens.
    pub positional_encoding: bool,
}

impl Default for SeqEncoderConfig {
    fn default() -> Self {
        SeqEncoderConfig {
            d_model: 64,
            layers: 2,
            heads: 4,
            ff_dim: 256,
            output_dim: 128,
            positional_encoding: true,
        }
    }
}

impl SeqEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.layers == 0 || self.heads == 0 || self.ff_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("sequence encoder dimensions must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

/// Concatenates the enabled per-frame inputs in the order box, pose, speed.
pub fn build_tokens<T: Scalar>(
    boxes: Option<ArrayView2<T>>,
    pose: Option<ArrayView2<T>>,
    speed: Option<ArrayView2<T>>,
) -> Result<Array2<T>> {
    let parts: Vec<ArrayView2<T>> = [boxes, pose, speed].into_iter().flatten().collect();
    let Some(first) = parts.first() else {
        return Err(Error::Config("no sequence input enabled: box, pose and speed are all masked".into()));
    };
    let n = first.nrows();
    if let Some(bad) = parts.iter().find(|p| p.nrows() != n) {
        return Err(Error::shape("token sequence length", n, bad.nrows()));
    }
    Ok(concatenate(Axis(1), &parts).expect("equal row counts"))
}

/// Sinusoidal position encoding, `n × d`.
pub fn positional_encoding<T: Scalar>(n: usize, d: usize) -> Array2<T> {
    Array2::from_shape_fn((n, d), |(pos, i)| {
        let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        T::of(if i % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    attn: MultiHeadAttention,
    ln1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    ln2: LayerNorm,
}

struct LayerCache<T> {
    attn: MhaCache<T>,
    ln1: LayerNormCache<T>,
    h1: Array2<T>,
    ff_pre: Array2<T>,
    ff_act: Array2<T>,
    ln2: LayerNormCache<T>,
}

pub struct SeqCache<T> {
    tokens: Array2<T>,
    layers: Vec<LayerCache<T>>,
    pooled: Array1<T>,
    out_ln: LayerNormCache<T>,
    normed: Array1<T>,
}

impl<T> SeqCache<T> {
    /// Per-head attention weights of encoder layer `layer`.
    pub fn attention(&self, layer: usize) -> &[Array2<T>] {
        &self.layers[layer].attn.attn
    }

    /// Pooled representation after the output normalization.
    pub fn normalized_pool(&self) -> ArrayView1<'_, T> {
        self.normed.view()
    }
}

#[derive(Clone, Debug)]
pub struct SeqEncoder {
    token_width: usize,
    positional_encoding: bool,
    input: Linear,
    layers: Vec<EncoderLayer>,
    out_ln: LayerNorm,
    head: Linear,
}

impl SeqEncoder {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, config: &SeqEncoderConfig, token_width: usize) -> Result<Self> {
        config.validate()?;
        if token_width == 0 {
            return Err(Error::Config("sequence encoder needs at least one token feature".into()));
        }
        b.set_role(ParamRole::SeqEncoder);
        let d = config.d_model;
        let input = Linear::new(b, "seq.input", token_width, d);
        let layers = (0..config.layers)
            .map(|l| EncoderLayer {
                attn: MultiHeadAttention::new(b, &format!("seq.layer{l}.attn"), d, config.heads),
                ln1: LayerNorm::new(b, &format!("seq.layer{l}.ln1"), d),
                ff1: Linear::new(b, &format!("seq.layer{l}.ff1"), d, config.ff_dim),
                ff2: Linear::new(b, &format!("seq.layer{l}.ff2"), config.ff_dim, d),
                ln2: LayerNorm::new(b, &format!("seq.layer{l}.ln2"), d),
            })
            .collect();
        Ok(SeqEncoder {
            token_width,
            positional_encoding: config.positional_encoding,
            input,
            layers,
            out_ln: LayerNorm::new(b, "seq.out_norm", d),
            head: Linear::new(b, "seq.head", d, config.output_dim),
        })
    }

    pub fn token_width(&self) -> usize {
        self.token_width
    }

    pub fn output_dim(&self) -> usize {
        self.head.out_dim
    }

    pub fn param_count(&self) -> usize {
        self.input.param_count()
            + self
                .layers
                .iter()
                .map(|l| l.attn.param_count() + l.ln1.param_count() + l.ff1.param_count() + l.ff2.param_count() + l.ln2.param_count())
                .sum::<usize>()
            + self.out_ln.param_count()
            + self.head.param_count()
    }

    /// `tokens`: `N × D` → `G`.
    pub fn forward<T: Scalar>(&self, p: &ParamSet<T>, tokens: ArrayView2<T>) -> Result<(Array1<T>, SeqCache<T>)> {
        let (n, dw) = tokens.dim();
        if dw != self.token_width || n == 0 {
            return Err(Error::shape("token matrix", format!("(N > 0, {})", self.token_width), (n, dw)));
        }
        let mut x = self.input.forward(p, tokens);
        if self.positional_encoding {
            x += &positional_encoding::<T>(n, x.ncols());
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (a, attn) = layer.attn.forward(p, x.view());
            let (h1, ln1) = layer.ln1.forward(p, (&x + &a).view());
            let ff_pre = layer.ff1.forward(p, h1.view());
            let ff_act = relu(&ff_pre);
            let f = layer.ff2.forward(p, ff_act.view());
            let (h2, ln2) = layer.ln2.forward(p, (&h1 + &f).view());
            caches.push(LayerCache {
                attn,
                ln1,
                h1,
                ff_pre,
                ff_act,
                ln2,
            });
            x = h2;
        }
        let pooled = x.mean_axis(Axis(0)).expect("non-empty sequence");
        let (normed, out_ln) = self.out_ln.forward(p, pooled.view().insert_axis(Axis(0)));
        let normed = normed.remove_axis(Axis(0));
        let out = self.head.forward_vec(p, normed.view());
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sequence encoder output".into()));
        }
        Ok((
            out,
            SeqCache {
                tokens: tokens.to_owned(),
                layers: caches,
                pooled,
                out_ln,
                normed,
            },
        ))
    }

    /// Accumulates parameter gradients; returns the gradient for the tokens.
    pub fn backward<T: Scalar>(&self, p: &ParamSet<T>, cache: &SeqCache<T>, dout: ArrayView1<T>, g: &mut Grads<T>) -> Array2<T> {
        let dnormed = self.head.backward_vec(p, cache.normed.view(), dout, g);
        let dpooled = self
            .out_ln
            .backward(p, &cache.out_ln, dnormed.view().insert_axis(Axis(0)), g)
            .remove_axis(Axis(0));
        debug_assert_eq!(dpooled.len(), cache.pooled.len());
        let n = cache.tokens.nrows();
        let inv = T::one() / T::of(n as f64);
        let mut dx = Array2::from_shape_fn((n, dpooled.len()), |(_, j)| dpooled[j] * inv);
        for (layer, c) in self.layers.iter().zip(&cache.layers).rev() {
            let dsum2 = layer.ln2.backward(p, &c.ln2, dx.view(), g);
            let dact = layer.ff2.backward(p, c.ff_act.view(), dsum2.view(), g);
            let dpre = relu_backward(&c.ff_pre, dact.view());
            let mut dh1 = layer.ff1.backward(p, c.h1.view(), dpre.view(), g);
            dh1 += &dsum2;
            let dsum1 = layer.ln1.backward(p, &c.ln1, dh1.view(), g);
            let mut dxin = layer.attn.backward(p, &c.attn, dsum1.view(), g);
            dxin += &dsum1;
            dx = dxin;
        }
        self.input.backward(p, cache.tokens.view(), dx.view(), g)
    }
}

/// A sequence encoder with its own parameters, for standalone use.
pub struct StandaloneSeqEncoder<T> {
    pub encoder: SeqEncoder,
    pub params: ParamSet<T>,
}

impl<T: Scalar> StandaloneSeqEncoder<T> {
    pub fn new(config: &SeqEncoderConfig, mask: FeatureMask, pose_dim: usize, seed: u64) -> Result<Self> {
        let width = mask.token_width(pose_dim);
        let mut params = ParamSet::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = SeqEncoder::new(&mut ParamBuilder::new(&mut params, &mut rng, ParamRole::SeqEncoder), config, width)?;
        Ok(StandaloneSeqEncoder { encoder, params })
    }

    pub fn encode(&self, tokens: ArrayView2<T>) -> Result<Array1<T>> {
        Ok(self.encoder.forward(&self.params, tokens)?.0)
    }
}
