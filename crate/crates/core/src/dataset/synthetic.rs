//! Procedural tracks and frames with label signal planted in chosen channels.

use std::collections::HashMap;

use image::RgbImage;
use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{TrackAnnotation, ANNOTATION_SCHEMA_VERSION, DEFAULT_IMAGE_HEIGHT, DEFAULT_IMAGE_WIDTH};
use crate::error::{Error, Result};
use crate::preprocess::{crop_resize_with, FrameSource};

/// Which channels carry label-correlated signal, plus label balance and track shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalSpec {
    /// Crossing tracks drive slower and decelerate.
    pub speed: bool,
    /// Crossing boxes drift toward the image centre.
    pub boxes: bool,
    /// Crossing pedestrians show a walking gait.
    pub pose: bool,
    /// Crossing pedestrians are rendered in a warm colour.
    pub images: bool,
    /// Track counts as `[non_crossing, crossing]`.
    pub class_ratio: [u32; 2],
    pub track_len: usize,
    pub pose_dim: usize,
    pub missing_keypoint_rate: f64,
    /// When false, tracks carry no ego-speed channel.
    pub with_speed: bool,
}

impl Default for SignalSpec {
    fn default() -> Self {
        SignalSpec {
            speed: true,
            boxes: false,
            pose: false,
            images: false,
            class_ratio: [1, 1],
            track_len: 100,
            pose_dim: super::DEFAULT_POSE_DIM,
            missing_keypoint_rate: 0.1,
            with_speed: true,
        }
    }
}

impl SignalSpec {
    pub fn speed_only() -> Self {
        SignalSpec::default()
    }

    /// No channel carries signal: labels are unpredictable.
    pub fn no_signal() -> Self {
        SignalSpec {
            speed: false,
            ..SignalSpec::default()
        }
    }

    pub fn all_channels() -> Self {
        SignalSpec {
            speed: true,
            boxes: true,
            pose: true,
            images: true,
            ..SignalSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_ratio[0] + self.class_ratio[1] == 0 {
            return Err(Error::Config("class_ratio must not be all zero".into()));
        }
        if self.track_len == 0 {
            return Err(Error::Config("track_len must be positive".into()));
        }
        if self.pose_dim == 0 || !self.pose_dim.is_multiple_of(2) {
            return Err(Error::Config("pose_dim must be a positive even number".into()));
        }
        if !(0.0..1.0).contains(&self.missing_keypoint_rate) {
            return Err(Error::Config("missing_keypoint_rate must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

// Keypoint layout as fractions of the box (x, y), COCO-18 order.
const POSE_TEMPLATE: [(f64, f64); 18] = [
    (0.50, 0.08),
    (0.50, 0.20),
    (0.35, 0.20),
    (0.30, 0.35),
    (0.28, 0.48),
    (0.42, 0.52),
    (0.42, 0.72),
    (0.42, 0.93),
    (0.58, 0.52),
    (0.58, 0.72),
    (0.58, 0.93),
    (0.65, 0.20),
    (0.70, 0.35),
    (0.72, 0.48),
    (0.47, 0.06),
    (0.53, 0.06),
    (0.44, 0.07),
    (0.56, 0.07),
];

// Knees and ankles swing with the gait.
const GAIT_KEYPOINTS: [usize; 4] = [6, 7, 9, 10];

fn track_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Generates `n_tracks` valid tracks, one per video, all of the same length
/// with the event on the last frame. Deterministic in `seed`.
pub fn generate_synthetic(n_tracks: usize, spec: &SignalSpec, seed: u64) -> Result<Vec<TrackAnnotation>> {
    spec.validate()?;
    let [neg, pos] = spec.class_ratio;
    let n_pos = ((n_tracks as f64) * f64::from(pos) / f64::from(neg + pos)).round() as usize;
    let mut labels: Vec<u8> = (0..n_tracks).map(|i| u8::from(i < n_pos)).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let tracks = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let mut rng = track_rng(seed, i);
            let crossing = label == 1;
            let len = spec.track_len;
            let first: u32 = rng.random_range(0..400);
            let frames: Vec<u32> = (first..first + len as u32).collect();

            // Boxes: grow as the vehicle approaches; horizontal drift per signal.
            let h0 = rng.random_range(90.0..180.0);
            let growth = rng.random_range(0.2..0.5);
            let yc = rng.random_range(500.0..650.0);
            let left = rng.random_bool(0.5);
            let (cx0, vx) = if spec.boxes {
                if crossing {
                    (rng.random_range(150.0..450.0), rng.random_range(2.0..4.0))
                } else {
                    (rng.random_range(100.0..500.0), rng.random_range(-1.0..0.3))
                }
            } else {
                (rng.random_range(150.0..600.0), rng.random_range(-1.0..4.0))
            };
            let boxes: Vec<[f64; 4]> = (0..len)
                .map(|k| {
                    let h = h0 + growth * k as f64;
                    let w = 0.41 * h;
                    let dx = cx0 + vx * k as f64;
                    let cx = if left { dx } else { DEFAULT_IMAGE_WIDTH - dx };
                    let cx = cx.clamp(w / 2.0 + 1.0, DEFAULT_IMAGE_WIDTH - w / 2.0 - 1.0);
                    [cx - w / 2.0, yc - h / 2.0, cx + w / 2.0, yc + h / 2.0]
                })
                .collect();

            let gait_amp = if spec.pose {
                if crossing {
                    rng.random_range(0.10..0.14)
                } else {
                    rng.random_range(0.0..0.02)
                }
            } else {
                rng.random_range(0.0..0.14)
            };
            let gait_phase = rng.random_range(0.0..std::f64::consts::TAU);
            let pose: Vec<Vec<f64>> = boxes
                .iter()
                .enumerate()
                .map(|(k, b)| {
                    let (w, h) = (b[2] - b[0], b[3] - b[1]);
                    let swing = gait_amp * (gait_phase + 0.4 * k as f64).sin();
                    (0..spec.pose_dim / 2)
                        .flat_map(|j| {
                            let kp = j % POSE_TEMPLATE.len();
                            let (mut u, v) = POSE_TEMPLATE[kp];
                            if GAIT_KEYPOINTS.contains(&kp) {
                                u += if kp < 8 { swing } else { -swing };
                            }
                            let missing = rng.random_bool(spec.missing_keypoint_rate);
                            let x = b[0] + u * w + 2.0 * noise.sample(&mut rng);
                            let y = b[1] + v * h + 2.0 * noise.sample(&mut rng);
                            if missing {
                                [0.0, 0.0]
                            } else {
                                [x.clamp(1.0, DEFAULT_IMAGE_WIDTH), y.clamp(1.0, DEFAULT_IMAGE_HEIGHT)]
                            }
                        })
                        .collect()
                })
                .collect();

            let (v0, slope) = if spec.speed {
                if crossing {
                    (rng.random_range(14.0..24.0), -rng.random_range(0.04..0.09))
                } else {
                    (rng.random_range(30.0..44.0), rng.random_range(-0.02..0.03))
                }
            } else {
                (rng.random_range(14.0..44.0), rng.random_range(-0.09..0.03))
            };
            let speeds: Vec<f64> = (0..len)
                .map(|k| (v0 + slope * k as f64 + 0.3 * noise.sample(&mut rng)).max(0.0))
                .collect();

            TrackAnnotation {
                schema_version: ANNOTATION_SCHEMA_VERSION,
                track_id: format!("synth_v{i:04}_p0"),
                video_id: format!("synth_v{i:04}"),
                event_frame: *frames.last().expect("track_len > 0"),
                frames,
                boxes,
                pose,
                ego_speed: spec.with_speed.then_some(speeds),
                label,
            }
        })
        .collect();
    Ok(tracks)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| splitmix(h ^ u64::from(b)))
}

#[derive(Clone, Debug)]
struct RenderTrack {
    first_frame: u32,
    boxes: Vec<[f64; 4]>,
    color: [f32; 3],
    sway_phase: f64,
    bg_seed: u64,
}

/// Renders full-resolution frames for synthetic tracks on demand: a smooth
/// background with block noise and a swaying pedestrian rectangle inside each box.
#[derive(Clone, Debug)]
pub struct SyntheticFrames {
    videos: HashMap<String, RenderTrack>,
    width: usize,
    height: usize,
}

impl SyntheticFrames {
    pub fn new(tracks: &[TrackAnnotation], spec: &SignalSpec, seed: u64) -> Self {
        const WARM: [f32; 3] = [210.0, 70.0, 60.0];
        const COOL: [f32; 3] = [60.0, 80.0, 200.0];
        let videos = tracks
            .iter()
            .map(|t| {
                let h = splitmix(hash_str(&t.track_id) ^ seed);
                let warm = if spec.images { t.is_crossing() } else { h & 1 == 1 };
                let base = if warm { WARM } else { COOL };
                let jitter = |k: u32| ((splitmix(h.rotate_left(k)) % 41) as f32) - 20.0;
                let color = [base[0] + jitter(8), base[1] + jitter(16), base[2] + jitter(24)];
                let rt = RenderTrack {
                    first_frame: t.frames[0],
                    boxes: t.boxes.clone(),
                    color,
                    sway_phase: (h >> 11) as f64 / (1u64 << 53) as f64 * std::f64::consts::TAU,
                    bg_seed: hash_str(&t.video_id),
                };
                (t.video_id.clone(), rt)
            })
            .collect();
        SyntheticFrames {
            videos,
            width: DEFAULT_IMAGE_WIDTH as usize,
            height: DEFAULT_IMAGE_HEIGHT as usize,
        }
    }

    fn track(&self, video_id: &str, frame_index: u32) -> Result<(&RenderTrack, usize)> {
        let unavailable = |reason: &str| Error::FrameUnavailable {
            video_id: video_id.to_string(),
            frame_index,
            reason: reason.to_string(),
        };
        let rt = self.videos.get(video_id).ok_or_else(|| unavailable("unknown video"))?;
        let local = frame_index
            .checked_sub(rt.first_frame)
            .map(|l| l as usize)
            .filter(|&l| l < rt.boxes.len())
            .ok_or_else(|| unavailable("frame outside track"))?;
        Ok((rt, local))
    }

    fn pixel(rt: &RenderTrack, frame_index: u32, local: usize, x: usize, y: usize) -> [f32; 3] {
        let (xf, yf, ff) = (x as f64, y as f64, f64::from(frame_index));
        let b = rt.boxes[local];
        let (w, h) = (b[2] - b[0], b[3] - b[1]);
        let sway = 0.08 * w * (0.35 * ff + rt.sway_phase).sin();
        let inside = xf >= b[0] + 0.2 * w + sway
            && xf < b[0] + 0.8 * w + sway
            && yf >= b[1] + 0.05 * h
            && yf < b[1] + 0.97 * h;
        if inside {
            let tex = (10.0 * (0.2 * yf).sin()) as f32;
            return rt.color.map(|c| (c + tex).clamp(0.0, 255.0));
        }
        let phase = (rt.bg_seed % 628) as f64 / 100.0;
        let block = splitmix(rt.bg_seed ^ ((x / 12) as u64) << 20 ^ (y / 12) as u64);
        let n = (block % 31) as f64 - 15.0;
        let px = [
            110.0 + 45.0 * (0.004 * xf + phase).sin() + n,
            120.0 + 35.0 * (0.005 * yf + 0.7 * phase).cos() + n,
            100.0 + 40.0 * (0.003 * (xf + yf) + 0.02 * ff).sin() + n,
        ];
        px.map(|v| v.clamp(0.0, 255.0) as f32)
    }

    /// Downscaled copy of a full frame, sampled at pixel centres.
    pub fn render_frame(&self, video_id: &str, frame_index: u32, width: u32, height: u32) -> Result<RgbImage> {
        let (rt, local) = self.track(video_id, frame_index)?;
        let sx = self.width as f64 / f64::from(width);
        let sy = self.height as f64 / f64::from(height);
        Ok(RgbImage::from_fn(width, height, |x, y| {
            let fx = ((f64::from(x) + 0.5) * sx) as usize;
            let fy = ((f64::from(y) + 0.5) * sy) as usize;
            let p = Self::pixel(rt, frame_index, local, fx.min(self.width - 1), fy.min(self.height - 1));
            image::Rgb(p.map(|v| v.round() as u8))
        }))
    }

    pub fn video_ids(&self) -> impl Iterator<Item = &str> {
        self.videos.keys().map(String::as_str)
    }
}

impl FrameSource for SyntheticFrames {
    fn crop(&self, video_id: &str, frame_index: u32, bbox: &[f64; 4], out_h: usize, out_w: usize) -> Result<Array3<f32>> {
        let (rt, local) = self.track(video_id, frame_index)?;
        crop_resize_with(
            self.width,
            self.height,
            |x, y| Self::pixel(rt, frame_index, local, x, y),
            bbox,
            out_h,
            out_w,
        )
        .map_err(|e| match e {
            Error::DegenerateCrop(_) => Error::DegenerateCrop(format!("{video_id}@{frame_index}")),
            other => other,
        })
    }
}
