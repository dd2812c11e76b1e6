//! Track annotations, observation windows, splits and class weighting.

mod split;
mod synthetic;
mod windows;

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use split::{split_by_video, DatasetSplit, SplitRatios};
pub use synthetic::{generate_synthetic, SignalSpec, SyntheticFrames};
pub use windows::{extract_windows, windows_for_tracks, FrameRecord, ObservationWindow, WindowOptions};

/// Version of the line-delimited annotation schema.
pub const ANNOTATION_SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_POSE_DIM: usize = 36;
pub const DEFAULT_IMAGE_WIDTH: f64 = 1920.0;
pub const DEFAULT_IMAGE_HEIGHT: f64 = 1080.0;

/// One pedestrian track: one line of the annotation file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackAnnotation {
    pub schema_version: u32,
    pub track_id: String,
    pub video_id: String,
    /// Consecutive frame indices at 30 fps.
    pub frames: Vec<u32>,
    /// `[x1, y1, x2, y2]` in pixels, origin top-left.
    pub boxes: Vec<[f64; 4]>,
    /// Keypoint coordinates in pixels per frame; `0.0` marks a missing keypoint.
    pub pose: Vec<Vec<f64>>,
    /// Ego-vehicle speed in km/h; absent for datasets without a usable speed signal.
    #[serde(default)]
    pub ego_speed: Option<Vec<f64>>,
    /// 1 = crossing, 0 = not crossing.
    pub label: u8,
    /// Crossing onset, or last observable frame for non-crossing tracks.
    pub event_frame: u32,
}

impl TrackAnnotation {
    pub fn is_crossing(&self) -> bool {
        self.label == 1
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Checks every track invariant, returning the first broken rule.
    pub fn validate(&self, opts: &LoadOptions) -> Result<()> {
        let fail = |rule: String| Error::Validation {
            track_id: self.track_id.clone(),
            rule,
        };
        if self.schema_version != ANNOTATION_SCHEMA_VERSION {
            return Err(fail(format!(
                "unsupported schema_version {} (expected {ANNOTATION_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.frames.is_empty() {
            return Err(fail("track has no frames".into()));
        }
        if self.frames.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(fail("frames not consecutive".into()));
        }
        let n = self.frames.len();
        if self.boxes.len() != n || self.pose.len() != n {
            return Err(fail(format!(
                "per-frame length mismatch: {n} frames, {} boxes, {} poses",
                self.boxes.len(),
                self.pose.len()
            )));
        }
        if let Some(speed) = &self.ego_speed {
            if speed.len() != n {
                return Err(fail(format!(
                    "per-frame length mismatch: {n} frames, {} speeds",
                    speed.len()
                )));
            }
            if speed.iter().any(|v| !v.is_finite()) {
                return Err(fail("speed not finite".into()));
            }
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if b.iter().any(|v| !v.is_finite()) {
                return Err(fail(format!("box not finite at frame {}", self.frames[i])));
            }
            if b[0] >= b[2] || b[1] >= b[3] {
                return Err(fail(format!("box degenerate at frame {}", self.frames[i])));
            }
            if b[0] < 0.0 || b[1] < 0.0 || b[2] > opts.image_width || b[3] > opts.image_height {
                return Err(fail(format!("box out of bounds at frame {}", self.frames[i])));
            }
        }
        for (i, p) in self.pose.iter().enumerate() {
            if p.len() != opts.pose_dim {
                return Err(fail(format!(
                    "pose dimension {} at frame {} (expected {})",
                    p.len(),
                    self.frames[i],
                    opts.pose_dim
                )));
            }
            if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(fail(format!("pose negative at frame {}", self.frames[i])));
            }
        }
        if self.label > 1 {
            return Err(fail(format!("label {} not in {{0, 1}}", self.label)));
        }
        if !self.frames.contains(&self.event_frame) {
            return Err(fail(format!(
                "event_frame {} not in frames",
                self.event_frame
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadOptions {
    pub pose_dim: usize,
    pub image_width: f64,
    pub image_height: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            pose_dim: DEFAULT_POSE_DIM,
            image_width: DEFAULT_IMAGE_WIDTH,
            image_height: DEFAULT_IMAGE_HEIGHT,
        }
    }
}

/// A track that parsed but was rejected by validation.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostic {
    pub line: usize,
    pub track_id: String,
    pub rule: String,
}

#[derive(Clone, Debug, Default)]
pub struct LoadReport {
    pub tracks: Vec<TrackAnnotation>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Reads a JSONL annotation file. Malformed lines abort the load; tracks that
/// parse but break an invariant are skipped and reported.
pub fn load_annotations(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<LoadReport> {
    let file = std::fs::File::open(path.as_ref())?;
    parse_annotations(BufReader::new(file), opts)
}

pub fn parse_annotations(reader: impl BufRead, opts: &LoadOptions) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let track: TrackAnnotation = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        match track.validate(opts) {
            Ok(()) => report.tracks.push(track),
            Err(Error::Validation { track_id, rule }) => report.diagnostics.push(Diagnostic {
                line: line_no,
                track_id,
                rule,
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}

pub fn write_annotations(mut writer: impl Write, tracks: &[TrackAnnotation]) -> Result<()> {
    for track in tracks {
        serde_json::to_writer(&mut writer, track)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Non-crossing and crossing counts of a training partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassWeight {
    pub non_crossing: u64,
    pub crossing: u64,
}

impl ClassWeight {
    /// Exact positive-class weight `non_crossing / crossing`.
    pub fn ratio(&self) -> Ratio<u64> {
        Ratio::new(self.non_crossing, self.crossing)
    }

    pub fn value(&self) -> f64 {
        self.non_crossing as f64 / self.crossing as f64
    }
}

/// Counts labels over the training windows; fails when there is no crossing window.
pub fn compute_class_weight(train_windows: &[ObservationWindow]) -> Result<ClassWeight> {
    let crossing = train_windows.iter().filter(|w| w.label == 1).count() as u64;
    let non_crossing = train_windows.len() as u64 - crossing;
    if crossing == 0 {
        return Err(Error::Config(
            "class weight undefined: no crossing windows in the training partition".into(),
        ));
    }
    Ok(ClassWeight {
        non_crossing,
        crossing,
    })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// A valid track with `len` frames starting at `first`, event on the last frame.
    pub fn track(id: &str, video: &str, first: u32, len: usize, label: u8) -> TrackAnnotation {
        let frames: Vec<u32> = (first..first + len as u32).collect();
        TrackAnnotation {
            schema_version: ANNOTATION_SCHEMA_VERSION,
            track_id: id.into(),
            video_id: video.into(),
            boxes: frames
                .iter()
                .map(|&f| [100.0 + f as f64 * 0.5, 200.0, 160.0 + f as f64 * 0.5, 350.0])
                .collect(),
            pose: frames.iter().map(|_| vec![300.0; DEFAULT_POSE_DIM]).collect(),
            ego_speed: Some(frames.iter().map(|&f| 20.0 + (f % 7) as f64).collect()),
            label,
            event_frame: *frames.last().unwrap(),
            frames,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::track;
    use super::*;

    fn to_jsonl(tracks: &[TrackAnnotation]) -> String {
        let mut buf = Vec::new();
        write_annotations(&mut buf, tracks).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn loads_single_valid_track() {
        let text = to_jsonl(&[track("t0", "v0", 0, 80, 1)]);
        let report = parse_annotations(text.as_bytes(), &LoadOptions::default()).unwrap();
        assert_eq!(report.tracks.len(), 1);
        assert!(report.diagnostics.is_empty());
        assert_eq!(report.tracks[0].len(), 80);
    }

    #[test]
    fn degenerate_box_is_reported() {
        let mut t = track("bad", "v0", 0, 40, 0);
        t.boxes[3] = [500.0, 10.0, 500.0, 90.0];
        let err = t.validate(&LoadOptions::default()).unwrap_err();
        assert!(err.to_string().contains("box degenerate"), "{err}");
        assert!(err.to_string().contains("bad"));
    }

    #[test]
    fn event_outside_frames_is_dropped_with_diagnostic() {
        let mut bad = track("t1", "v1", 10, 50, 1);
        bad.event_frame = 500;
        let text = to_jsonl(&[track("t0", "v0", 0, 50, 0), bad, track("t2", "v2", 0, 50, 1)]);
        let report = parse_annotations(text.as_bytes(), &LoadOptions::default()).unwrap();
        assert_eq!(report.tracks.len(), 2);
        assert_eq!(report.diagnostics.len(), 1);
        assert_eq!(report.diagnostics[0].line, 2);
        assert_eq!(report.diagnostics[0].track_id, "t1");
        assert!(report.diagnostics[0].rule.contains("event_frame"));
    }

    #[test]
    fn malformed_line_names_line_number() {
        let mut text = to_jsonl(&[track("t0", "v0", 0, 20, 0)]);
        text.push_str("{\"schema_version\": 1, \"track_id\": \n");
        let err = parse_annotations(text.as_bytes(), &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn other_invariants() {
        let opts = LoadOptions::default();
        let mut t = track("t", "v", 0, 20, 0);
        t.frames[5] += 1;
        assert!(t.validate(&opts).unwrap_err().to_string().contains("consecutive"));

        let mut t = track("t", "v", 0, 20, 0);
        t.pose[2][7] = -1.0;
        assert!(t.validate(&opts).unwrap_err().to_string().contains("pose negative"));

        let mut t = track("t", "v", 0, 20, 0);
        t.boxes[0][2] = 1921.0;
        assert!(t.validate(&opts).unwrap_err().to_string().contains("out of bounds"));

        // zero keypoints and absent speed are allowed
        let mut t = track("t", "v", 0, 20, 0);
        t.pose[0] = vec![0.0; 36];
        t.ego_speed = None;
        t.validate(&opts).unwrap();
    }

    #[test]
    fn missing_speed_field_parses() {
        let line = r#"{"schema_version":1,"track_id":"a","video_id":"v","frames":[0],"boxes":[[1,2,3,4]],"pose":[[0,0]],"label":0,"event_frame":0}"#;
        let opts = LoadOptions {
            pose_dim: 2,
            ..LoadOptions::default()
        };
        let report = parse_annotations(line.as_bytes(), &opts).unwrap();
        assert_eq!(report.tracks.len(), 1);
        assert!(report.tracks[0].ego_speed.is_none());
    }

    fn windows_with_labels(neg: usize, pos: usize) -> Vec<ObservationWindow> {
        let t = track("t", "v", 0, 100, 0);
        let proto = extract_windows(&t, &WindowOptions::default()).unwrap().remove(0);
        (0..neg + pos)
            .map(|i| ObservationWindow {
                label: u8::from(i >= neg),
                ..proto.clone()
            })
            .collect()
    }

    #[test]
    fn class_weight_examples() {
        let w = compute_class_weight(&windows_with_labels(50, 50)).unwrap();
        assert_eq!(w.value(), 1.0);
        let w = compute_class_weight(&windows_with_labels(100, 25)).unwrap();
        assert_eq!(w.value(), 4.0);
        assert_eq!(w.ratio() * Ratio::from_integer(w.crossing), Ratio::from_integer(w.non_crossing));
        assert!(compute_class_weight(&windows_with_labels(10, 0)).is_err());
    }
}
