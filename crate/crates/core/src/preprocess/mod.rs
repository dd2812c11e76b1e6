//! Turns observation windows into model-ready arrays.
//!
//! Images: every second frame of the window is cropped to the pedestrian box,
//! resized to a square and scaled to `[0, 1]`; the resulting frames are stacked
//! along the channel axis (`(N·C)/2 × H × W`). Boxes and pose are divided by the
//! image dimensions; speed is z-scored with training-partition statistics.

mod frames;

use ndarray::{Array2, Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::dataset::{ObservationWindow, DEFAULT_IMAGE_HEIGHT, DEFAULT_IMAGE_WIDTH, DEFAULT_POSE_DIM};
use crate::error::{Error, Result};
use crate::mask::FeatureMask;
use crate::scalar::Scalar;

pub use frames::{crop_resize, crop_resize_with, DirectoryFrames, FrameSource};

/// Layout of the model inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputGeometry {
    /// Observation length N at 30 fps.
    pub obs_len: usize,
    /// Colour channels C per frame.
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub pose_dim: usize,
    /// Full-frame dimensions used for box and pose scaling.
    pub image_width: f64,
    pub image_height: f64,
    /// 0 keeps frames 0, 2, 4, ...; 1 keeps 1, 3, 5, ...
    pub subsample_phase: usize,
}

impl Default for InputGeometry {
    fn default() -> Self {
        InputGeometry {
            obs_len: 16,
            channels: 3,
            height: 112,
            width: 112,
            pose_dim: DEFAULT_POSE_DIM,
            image_width: DEFAULT_IMAGE_WIDTH,
            image_height: DEFAULT_IMAGE_HEIGHT,
            subsample_phase: 0,
        }
    }
}

impl InputGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.obs_len == 0 || !self.obs_len.is_multiple_of(2) {
            return Err(Error::Config(format!("obs_len must be positive and even, got {}", self.obs_len)));
        }
        if self.channels == 0 || self.height == 0 || self.width == 0 || self.pose_dim == 0 {
            return Err(Error::Config("input dimensions must be positive".into()));
        }
        if self.subsample_phase > 1 {
            return Err(Error::Config("subsample_phase must be 0 or 1".into()));
        }
        if !(self.image_width > 0.0 && self.image_height > 0.0) {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Frames kept after halving the frame rate.
    pub fn video_frames(&self) -> usize {
        self.obs_len / 2
    }

    /// `(N·C)/2`.
    pub fn video_channels(&self) -> usize {
        self.obs_len * self.channels / 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

/// Normalization constants, fitted on the training partition and reused unchanged
/// for validation, test and inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub speed: Option<SpeedStats>,
    pub image_width: f64,
    pub image_height: f64,
}

impl NormStats {
    /// Speed statistics over every frame of every window, or `None` when any
    /// window lacks speed.
    pub fn fit(train_windows: &[ObservationWindow], geometry: &InputGeometry) -> Self {
        let speeds: Option<Vec<f64>> = train_windows
            .iter()
            .flat_map(|w| w.frames.iter().map(|f| f.speed))
            .collect();
        NormStats {
            speed: speeds.filter(|s| !s.is_empty()).map(|s| speed_stats(&s)),
            image_width: geometry.image_width,
            image_height: geometry.image_height,
        }
    }
}

/// Mean and population standard deviation.
pub fn speed_stats(values: &[f64]) -> SpeedStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    SpeedStats { mean, std: var.sqrt() }
}

/// Keeps every second element of a length-`expected` sequence, starting at `phase`.
pub fn subsample_frames<X: Clone>(frames: &[X], expected: usize, phase: usize) -> Result<Vec<X>> {
    if frames.len() != expected || !expected.is_multiple_of(2) {
        return Err(Error::shape("subsample_frames", expected, frames.len()));
    }
    Ok(frames.iter().skip(phase).step_by(2).cloned().collect())
}

/// Min-max scaling with a fixed value range.
pub fn normalize_image<T: Scalar>(img: ArrayView3<f32>, range: (f32, f32)) -> Array3<T> {
    let (lo, hi) = range;
    let span = hi - lo;
    img.mapv(|v| T::of(f64::from(v - lo) / f64::from(span)))
}

pub fn normalize_box(bbox: &[f64; 4], stats: &NormStats) -> Result<[f64; 4]> {
    let (w, h) = (stats.image_width, stats.image_height);
    let inside = |v: f64, max: f64| v.is_finite() && (0.0..=max).contains(&v);
    if !(inside(bbox[0], w) && inside(bbox[2], w) && inside(bbox[1], h) && inside(bbox[3], h)) {
        return Err(Error::OutOfBounds(format!("box {bbox:?} outside {w}x{h} image")));
    }
    Ok([bbox[0] / w, bbox[1] / h, bbox[2] / w, bbox[3] / h])
}

/// Interleaved `(x, y)` keypoints divided by the image size. Missing keypoints
/// (exact zeros) stay exactly zero.
pub fn normalize_pose(pose: &[f64], stats: &NormStats) -> Result<Vec<f64>> {
    pose.iter()
        .enumerate()
        .map(|(i, &v)| {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::OutOfBounds(format!("negative keypoint value {v} at {i}")));
            }
            Ok(if i % 2 == 0 { v / stats.image_width } else { v / stats.image_height })
        })
        .collect()
}

pub fn zscore_speed(v: f64, stats: &NormStats) -> Result<f64> {
    let s = stats
        .speed
        .ok_or_else(|| Error::Config("speed statistics unavailable (speed absent in training data)".into()))?;
    if s.std.is_nan() || s.std <= 0.0 {
        return Err(Error::Config(format!("speed std must be positive, got {}", s.std)));
    }
    Ok((v - s.mean) / s.std)
}

/// Preprocessed arrays for one window. Inputs disabled by the mask are absent.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle<T> {
    /// `(N·C)/2 × H × W`, frame-major channels, values in `[0, 1]`.
    pub video_stack: Option<Array3<T>>,
    /// `N × 4`.
    pub box_seq: Option<Array2<T>>,
    /// `N × pose_dim`.
    pub pose_seq: Option<Array2<T>>,
    /// `N × 1`.
    pub speed_seq: Option<Array2<T>>,
    pub label: u8,
    pub mask: FeatureMask,
}

/// Everything needed to assemble bundles: geometry, fitted statistics and,
/// when images are used, a frame source.
#[derive(Clone, Copy)]
pub struct Preprocessor<'a> {
    pub geometry: &'a InputGeometry,
    pub stats: &'a NormStats,
    pub frames: Option<&'a dyn FrameSource>,
}

impl<'a> Preprocessor<'a> {
    pub fn new(geometry: &'a InputGeometry, stats: &'a NormStats, frames: Option<&'a dyn FrameSource>) -> Self {
        Preprocessor { geometry, stats, frames }
    }

    pub fn assemble<T: Scalar>(&self, window: &ObservationWindow, mask: FeatureMask) -> Result<FeatureBundle<T>> {
        assemble_bundle(window, self, mask)
    }
}

pub fn assemble_bundle<T: Scalar>(
    window: &ObservationWindow,
    pre: &Preprocessor<'_>,
    mask: FeatureMask,
) -> Result<FeatureBundle<T>> {
    mask.validate()?;
    let g = pre.geometry;
    let n = g.obs_len;
    if window.frames.len() != n {
        return Err(Error::shape(format!("window {}", window.track_id), n, window.frames.len()));
    }

    let video_stack = if mask.images {
        let frames = pre
            .frames
            .ok_or_else(|| Error::Config("image input enabled but no frame source configured".into()))?;
        let kept = subsample_frames(&window.frames, n, g.subsample_phase)?;
        let mut stack = Array3::<T>::zeros((g.video_channels(), g.height, g.width));
        for (t, rec) in kept.iter().enumerate() {
            let crop = frames.crop(&window.video_id, rec.frame_index, &rec.bbox, g.height, g.width)?;
            if crop.dim() != (g.height, g.width, g.channels) {
                return Err(Error::shape("frame crop", (g.height, g.width, g.channels), crop.dim()));
            }
            let img = normalize_image::<T>(crop.view(), (0.0, 255.0));
            for c in 0..g.channels {
                stack
                    .index_axis_mut(ndarray::Axis(0), t * g.channels + c)
                    .assign(&img.index_axis(ndarray::Axis(2), c));
            }
        }
        Some(stack)
    } else {
        None
    };

    let box_seq = if mask.boxes {
        let mut a = Array2::<T>::zeros((n, 4));
        for (i, rec) in window.frames.iter().enumerate() {
            let b = normalize_box(&rec.bbox, pre.stats)?;
            for k in 0..4 {
                a[[i, k]] = T::of(b[k]);
            }
        }
        Some(a)
    } else {
        None
    };

    let pose_seq = if mask.pose {
        let mut a = Array2::<T>::zeros((n, g.pose_dim));
        for (i, rec) in window.frames.iter().enumerate() {
            if rec.pose.len() != g.pose_dim {
                return Err(Error::shape("pose vector", g.pose_dim, rec.pose.len()));
            }
            for (k, v) in normalize_pose(&rec.pose, pre.stats)?.into_iter().enumerate() {
                a[[i, k]] = T::of(v);
            }
        }
        Some(a)
    } else {
        None
    };

    let speed_seq = if mask.speed {
        let mut a = Array2::<T>::zeros((n, 1));
        for (i, rec) in window.frames.iter().enumerate() {
            let v = rec.speed.ok_or_else(|| {
                Error::Config(format!(
                    "speed input enabled but track {} has no speed; mask the speed channel off",
                    window.track_id
                ))
            })?;
            a[[i, 0]] = T::of(zscore_speed(v, pre.stats)?);
        }
        Some(a)
    } else {
        None
    };

    Ok(FeatureBundle {
        video_stack,
        box_seq,
        pose_seq,
        speed_seq,
        label: window.label,
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{extract_windows, generate_synthetic, SignalSpec, SyntheticFrames, WindowOptions};
    use proptest::prelude::*;

    fn stats() -> NormStats {
        NormStats {
            speed: Some(SpeedStats { mean: 5.0, std: 5.0 }),
            image_width: 1920.0,
            image_height: 1080.0,
        }
    }

    #[test]
    fn subsample_even_indices() {
        let idx: Vec<usize> = (0..16).collect();
        assert_eq!(subsample_frames(&idx, 16, 0).unwrap(), vec![0, 2, 4, 6, 8, 10, 12, 14]);
        assert_eq!(subsample_frames(&idx, 16, 1).unwrap(), vec![1, 3, 5, 7, 9, 11, 13, 15]);
        assert_eq!(subsample_frames(&[7; 16], 16, 0).unwrap(), vec![7; 8]);
        assert!(subsample_frames(&idx[..15], 16, 0).is_err());
    }

    #[test]
    fn image_range_endpoints() {
        let img = ndarray::arr3(&[[[0.0f32, 255.0, 127.5]]]);
        let out = normalize_image::<f64>(img.view(), (0.0, 255.0));
        assert_eq!(out[[0, 0, 0]], 0.0);
        assert_eq!(out[[0, 0, 1]], 1.0);
        assert_eq!(out[[0, 0, 2]], 0.5);
        let zeros = Array3::<f32>::zeros((4, 4, 3));
        assert!(normalize_image::<f32>(zeros.view(), (0.0, 255.0)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn box_normalization() {
        let s = stats();
        assert_eq!(normalize_box(&[960.0, 540.0, 1920.0, 1080.0], &s).unwrap(), [0.5, 0.5, 1.0, 1.0]);
        let eps = 1e-3;
        let b = normalize_box(&[0.0, 0.0, eps, eps], &s).unwrap();
        assert_eq!(b[0], 0.0);
        assert!((b[2] - eps / 1920.0).abs() < 1e-18);
        assert!(normalize_box(&[1920.0, 540.0, 1925.0, 600.0], &s).is_err());
    }

    #[test]
    fn pose_normalization() {
        let s = stats();
        assert!(normalize_pose(&[0.0; 36], &s).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(normalize_pose(&[1920.0, 1080.0], &s).unwrap(), vec![1.0, 1.0]);
        assert_eq!(normalize_pose(&[480.0, 270.0], &s).unwrap(), vec![0.25, 0.25]);
        assert!(normalize_pose(&[-1.0, 3.0], &s).is_err());
    }

    #[test]
    fn speed_zscore() {
        let s = stats();
        assert_eq!(zscore_speed(5.0, &s).unwrap(), 0.0);
        assert_eq!(zscore_speed(10.0, &s).unwrap(), 1.0);
        // Population std of {0, 10} is 5.
        let fitted = NormStats {
            speed: Some(speed_stats(&[0.0, 10.0])),
            ..stats()
        };
        assert_eq!(zscore_speed(10.0, &fitted).unwrap(), 1.0);
        let flat = NormStats {
            speed: Some(SpeedStats { mean: 1.0, std: 0.0 }),
            ..stats()
        };
        assert!(zscore_speed(1.0, &flat).is_err());
    }

    fn synthetic_window() -> (ObservationWindow, SyntheticFrames) {
        let tracks = generate_synthetic(1, &SignalSpec::all_channels(), 4).unwrap();
        let frames = SyntheticFrames::new(&tracks, &SignalSpec::all_channels(), 4);
        let w = extract_windows(&tracks[0], &WindowOptions::default()).unwrap().remove(0);
        (w, frames)
    }

    #[test]
    fn full_mask_shapes() {
        let (w, frames) = synthetic_window();
        let geometry = InputGeometry::default();
        let stats = NormStats::fit(std::slice::from_ref(&w), &geometry);
        let pre = Preprocessor::new(&geometry, &stats, Some(&frames));
        let b: FeatureBundle<f32> = pre.assemble(&w, FeatureMask::ALL).unwrap();
        assert_eq!(b.video_stack.as_ref().unwrap().dim(), (24, 112, 112));
        assert_eq!(b.box_seq.as_ref().unwrap().dim(), (16, 4));
        assert_eq!(b.pose_seq.as_ref().unwrap().dim(), (16, 36));
        assert_eq!(b.speed_seq.as_ref().unwrap().dim(), (16, 1));
        let v = b.video_stack.unwrap();
        assert!(v.iter().all(|&x| (0.0..=1.0).contains(&x)));

        let no_img: FeatureBundle<f32> = pre.assemble(&w, FeatureMask::new(false, true, true, true)).unwrap();
        assert!(no_img.video_stack.is_none());
        assert_eq!(no_img.box_seq, b.box_seq);
        assert_eq!(no_img.speed_seq, b.speed_seq);

        let speed: FeatureBundle<f32> = pre.assemble(&w, FeatureMask::new(false, false, false, true)).unwrap();
        assert!(speed.video_stack.is_none() && speed.box_seq.is_none() && speed.pose_seq.is_none());
        assert_eq!(speed.speed_seq.unwrap().dim(), (16, 1));
    }

    #[test]
    fn custom_geometry_shapes() {
        let (w, frames) = synthetic_window();
        let geometry = InputGeometry {
            height: 20,
            width: 24,
            ..InputGeometry::default()
        };
        let stats = NormStats::fit(std::slice::from_ref(&w), &geometry);
        let pre = Preprocessor::new(&geometry, &stats, Some(&frames));
        let b: FeatureBundle<f64> = pre.assemble(&w, FeatureMask::new(true, false, false, false)).unwrap();
        assert_eq!(b.video_stack.unwrap().dim(), (24, 20, 24));
    }

    #[test]
    fn missing_frame_source_or_frame_fails() {
        let (mut w, frames) = synthetic_window();
        let geometry = InputGeometry::default();
        let stats = NormStats::fit(std::slice::from_ref(&w), &geometry);
        let pre = Preprocessor::new(&geometry, &stats, None);
        assert!(pre.assemble::<f32>(&w, FeatureMask::ALL).is_err());
        w.video_id = "elsewhere".into();
        let pre = Preprocessor::new(&geometry, &stats, Some(&frames));
        let err = pre.assemble::<f32>(&w, FeatureMask::ALL).unwrap_err();
        assert!(matches!(err, Error::FrameUnavailable { ref video_id, .. } if video_id == "elsewhere"), "{err}");
    }

    proptest! {
        #[test]
        fn box_round_trip(x1 in 0.0f64..1900.0, y1 in 0.0f64..1000.0, w in 0.5f64..20.0, h in 0.5f64..80.0) {
            let s = stats();
            let b = [x1, y1, x1 + w, y1 + h];
            let n = normalize_box(&b, &s).unwrap();
            let back = [n[0] * 1920.0, n[1] * 1080.0, n[2] * 1920.0, n[3] * 1080.0];
            for k in 0..4 {
                prop_assert!((back[k] - b[k]).abs() <= 1e-6 * b[k].abs().max(1e-12));
                prop_assert!((0.0..=1.0).contains(&n[k]));
            }
        }

        #[test]
        fn pose_zeros_preserved(values in proptest::collection::vec(prop_oneof![Just(0.0f64), 0.0f64..1080.0], 36)) {
            let out = normalize_pose(&values, &stats()).unwrap();
            for (a, b) in values.iter().zip(&out) {
                prop_assert_eq!(*a == 0.0, *b == 0.0);
                prop_assert!((0.0..=1.0).contains(b));
            }
        }

        #[test]
        fn subsample_is_ordered_subset(phase in 0usize..2) {
            let idx: Vec<usize> = (0..16).collect();
            let out = subsample_frames(&idx, 16, phase).unwrap();
            prop_assert_eq!(out.len(), 8);
            prop_assert!(out.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(out.iter().all(|v| idx.contains(v)));
        }
    }
}
