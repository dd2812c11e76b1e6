use serde::{Deserialize, Serialize};

use super::TrackAnnotation;
use crate::error::{Error, Result};

/// Observation length and time-to-event bounds, in frames.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowOptions {
    pub obs_len: usize,
    pub tte_min: u32,
    pub tte_max: u32,
    /// Step between consecutive window starts.
    pub stride: usize,
}

impl Default for WindowOptions {
    fn default() -> Self {
        WindowOptions {
            obs_len: 16,
            tte_min: 30,
            tte_max: 60,
            stride: 1,
        }
    }
}

impl WindowOptions {
    pub fn validate(&self) -> Result<()> {
        if self.obs_len == 0 {
            return Err(Error::Config("obs_len must be positive".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("window stride must be at least 1".into()));
        }
        if self.tte_min > self.tte_max {
            return Err(Error::Config(format!(
                "tte_min {} exceeds tte_max {}",
                self.tte_min, self.tte_max
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_index: u32,
    pub bbox: [f64; 4],
    pub pose: Vec<f64>,
    pub speed: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationWindow {
    pub track_id: String,
    pub video_id: String,
    pub start_frame: u32,
    pub frames: Vec<FrameRecord>,
    /// Frames from the last observed frame to the event.
    pub tte: u32,
    pub label: u8,
}

impl ObservationWindow {
    pub fn last_frame(&self) -> u32 {
        self.frames.last().map_or(self.start_frame, |f| f.frame_index)
    }

    pub fn has_speed(&self) -> bool {
        self.frames.iter().all(|f| f.speed.is_some())
    }
}

/// Emits every `obs_len` window whose last frame lies `tte_min..=tte_max`
/// frames before the event, earliest first, stepping by `stride`.
pub fn extract_windows(
    track: &TrackAnnotation,
    opts: &WindowOptions,
) -> Result<Vec<ObservationWindow>> {
    opts.validate()?;
    let n = track.frames.len() as i64;
    let obs = opts.obs_len as i64;
    if n < obs {
        return Ok(Vec::new());
    }
    let first = i64::from(track.frames[0]);
    let event_idx = i64::from(track.event_frame) - first;
    // Feasible last-frame indices form one contiguous range.
    let last_lo = (obs - 1).max(event_idx - i64::from(opts.tte_max));
    let last_hi = (n - 1).min(event_idx - i64::from(opts.tte_min));
    if last_lo > last_hi {
        return Ok(Vec::new());
    }
    let windows = (last_lo..=last_hi)
        .step_by(opts.stride)
        .map(|last| {
            let start = (last - obs + 1) as usize;
            let frames = (start..=last as usize)
                .map(|i| FrameRecord {
                    frame_index: track.frames[i],
                    bbox: track.boxes[i],
                    pose: track.pose[i].clone(),
                    speed: track.ego_speed.as_ref().map(|s| s[i]),
                })
                .collect();
            ObservationWindow {
                track_id: track.track_id.clone(),
                video_id: track.video_id.clone(),
                start_frame: track.frames[start],
                frames,
                tte: (event_idx - last) as u32,
                label: track.label,
            }
        })
        .collect();
    Ok(windows)
}

pub fn windows_for_tracks(
    tracks: &[TrackAnnotation],
    opts: &WindowOptions,
) -> Result<Vec<ObservationWindow>> {
    let mut out = Vec::new();
    for t in tracks {
        out.extend(extract_windows(t, opts)?);
    }
    Ok(out)
}
