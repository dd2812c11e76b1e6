//! Pedestrian crossing-intention prediction from short observation windows.
//!
//! A shift-based video encoder reads stacked pedestrian crops, a transformer
//! encoder reads per-frame box, pose and ego-speed tokens, and a small fusion
//! head turns both into a crossing logit. The crate covers the whole pipeline:
//! annotation loading and windowing ([`dataset`]), feature assembly
//! ([`preprocess`]), the model ([`fusion`]), training ([`training`]),
//! metrics and the input-importance study ([`evaluation`]) and checkpoints
//! ([`checkpoint`]).
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the common choices.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod mask;
pub mod nn;
pub mod preprocess;
pub mod scalar;
pub mod seq_encoder;
pub mod training;
pub mod video_encoder;

pub use error::{Error, Result};
pub use fusion::{FusionMode, IntFormer, IntFormerConfig};
pub use mask::FeatureMask;
pub use scalar::Scalar;

/// Single-precision model, the default for training.
pub type IntFormerF32 = IntFormer<f32>;
/// Double-precision model, used for gradient checks.
pub type IntFormerF64 = IntFormer<f64>;
pub type FeatureBundleF32 = preprocess::FeatureBundle<f32>;
pub type CheckpointF32 = checkpoint::Checkpoint<f32>;
