//! Input-channel selection shared by preprocessing, the model and the ablation runner.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which of the four inputs (image crops, box coordinates, pose keypoints,
/// ego-vehicle speed) are fed to the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureMask {
    pub images: bool,
    pub boxes: bool,
    pub pose: bool,
    pub speed: bool,
}

impl FeatureMask {
    pub const ALL: FeatureMask = FeatureMask::new(true, true, true, true);

    pub const fn new(images: bool, boxes: bool, pose: bool, speed: bool) -> Self {
        FeatureMask {
            images,
            boxes,
            pose,
            speed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.active_count() == 0 {
            return Err(Error::Config("feature mask has no active input".into()));
        }
        Ok(())
    }

    pub fn active_count(&self) -> usize {
        [self.images, self.boxes, self.pose, self.speed]
            .iter()
            .filter(|&&b| b)
            .count()
    }

    /// True when at least one non-image sequence is active.
    pub fn any_sequence(&self) -> bool {
        self.boxes || self.pose || self.speed
    }

    /// Width of one per-timestep token for the active non-image inputs.
    pub fn token_width(&self, pose_dim: usize) -> usize {
        let mut width = 0;
        if self.boxes {
            width += 4;
        }
        if self.pose {
            width += pose_dim;
        }
        if self.speed {
            width += 1;
        }
        width
    }

    /// The fifteen input combinations of the input-importance study, in table order.
    pub fn importance_study() -> Vec<FeatureMask> {
        const T: bool = true;
        const F: bool = false;
        vec![
            FeatureMask::new(T, F, F, F),
            FeatureMask::new(F, T, F, F),
            FeatureMask::new(F, F, T, F),
            FeatureMask::new(F, F, F, T),
            FeatureMask::new(F, F, T, T),
            FeatureMask::new(F, T, F, T),
            FeatureMask::new(T, F, F, T),
            FeatureMask::new(F, T, T, F),
            FeatureMask::new(T, F, T, F),
            FeatureMask::new(F, T, T, T),
            FeatureMask::new(T, T, T, F),
            FeatureMask::new(T, F, T, T),
            FeatureMask::new(T, T, F, T),
            FeatureMask::new(T, T, F, F),
            FeatureMask::new(T, T, T, T),
        ]
    }
}

impl Default for FeatureMask {
    fn default() -> Self {
        FeatureMask::ALL
    }
}

/// Fixed-width form: one letter per active input, `-` otherwise (`I--S`).
impl fmt::Display for FeatureMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = |on: bool, l: char| if on { l } else { '-' };
        write!(
            f,
            "{}{}{}{}",
            c(self.images, 'I'),
            c(self.boxes, 'B'),
            c(self.pose, 'P'),
            c(self.speed, 'S')
        )
    }
}

/// Accepts the fixed-width form (`I--S`), a letter set (`is`, `b+s`) or `all`.
impl FromStr for FeatureMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(FeatureMask::ALL);
        }
        let mut mask = FeatureMask::new(false, false, false, false);
        for ch in s.chars() {
            match ch.to_ascii_lowercase() {
                'i' => mask.images = true,
                'b' => mask.boxes = true,
                'p' => mask.pose = true,
                's' => mask.speed = true,
                '-' | '+' | ' ' => {}
                other => {
                    return Err(Error::Config(format!(
                        "invalid feature mask {s:?}: unexpected {other:?}"
                    )))
                }
            }
        }
        mask.validate()?;
        Ok(mask)
    }
}
