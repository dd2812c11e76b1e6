use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::windows::{extract_windows, ObservationWindow, WindowOptions};
use super::TrackAnnotation;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Self {
        SplitRatios { train, val, test }
    }

    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Config(format!("split ratios must be positive, got {r:?}")));
        }
        if (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1, got {r:?}")));
        }
        Ok(())
    }

    /// Largest-remainder allocation of `n` items, at least one per partition.
    fn allocate(&self, n: usize) -> [usize; 3] {
        let r = [self.train, self.val, self.test];
        let exact: Vec<f64> = r.iter().map(|x| x * n as f64).collect();
        let mut counts = [0usize; 3];
        for i in 0..3 {
            counts[i] = exact[i].floor() as usize;
        }
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        let mut left = n - counts.iter().sum::<usize>();
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            let donor = (0..3).max_by_key(|&i| (counts[i], 3 - i)).unwrap();
            counts[donor] -= 1;
            counts[empty] += 1;
        }
        counts
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios::new(0.7, 0.15, 0.15)
    }
}

/// Train/val/test windows, partitioned at video granularity.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<ObservationWindow>,
    pub val: Vec<ObservationWindow>,
    pub test: Vec<ObservationWindow>,
    pub train_videos: Vec<String>,
    pub val_videos: Vec<String>,
    pub test_videos: Vec<String>,
}

impl DatasetSplit {
    pub fn partitions(&self) -> [(&'static str, &[ObservationWindow]); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }
}

/// Shuffles the distinct video ids under `seed` and deals them into three
/// partitions, then extracts windows from each partition's tracks.
pub fn split_by_video(
    tracks: &[TrackAnnotation],
    ratios: SplitRatios,
    seed: u64,
    window_opts: &WindowOptions,
) -> Result<DatasetSplit> {
    ratios.validate()?;
    let videos: BTreeSet<&str> = tracks.iter().map(|t| t.video_id.as_str()).collect();
    let mut videos: Vec<&str> = videos.into_iter().collect();
    if videos.len() < 3 {
        return Err(Error::Config(format!(
            "cannot split {} videos into 3 partitions",
            videos.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    videos.shuffle(&mut rng);
    let [n_train, n_val, _] = ratios.allocate(videos.len());

    let mut parts: [Vec<String>; 3] = Default::default();
    for (i, v) in videos.iter().enumerate() {
        let p = if i < n_train {
            0
        } else if i < n_train + n_val {
            1
        } else {
            2
        };
        parts[p].push((*v).to_string());
    }
    for p in parts.iter_mut() {
        p.sort();
    }

    let mut windows: [Vec<ObservationWindow>; 3] = Default::default();
    for track in tracks {
        let p = parts
            .iter()
            .position(|vids| vids.binary_search(&track.video_id).is_ok())
            .expect("every video is assigned");
        windows[p].extend(extract_windows(track, window_opts)?);
    }
    let [train, val, test] = windows;
    let [train_videos, val_videos, test_videos] = parts;
    Ok(DatasetSplit {
        train,
        val,
        test,
        train_videos,
        val_videos,
        test_videos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::fixtures::track;
    use proptest::prelude::*;

    fn tracks(n_videos: usize, per_video: usize) -> Vec<TrackAnnotation> {
        (0..n_videos)
            .flat_map(|v| {
                (0..per_video).map(move |k| {
                    track(&format!("v{v}_t{k}"), &format!("v{v}"), 0, 90, ((v + k) % 2) as u8)
                })
            })
            .collect()
    }

    #[test]
    fn deterministic_under_seed() {
        let t = tracks(10, 2);
        let r = SplitRatios::new(0.8, 0.1, 0.1);
        let a = split_by_video(&t, r, 7, &WindowOptions::default()).unwrap();
        let b = split_by_video(&t, r, 7, &WindowOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train_videos.len(), 8);
        assert_eq!(a.val_videos.len(), 1);
        assert_eq!(a.test_videos.len(), 1);
    }

    #[test]
    fn three_videos_one_each() {
        let t = tracks(3, 1);
        let third = 1.0 / 3.0;
        let s = split_by_video(&t, SplitRatios::new(third, third, third), 1, &WindowOptions::default())
            .unwrap();
        assert_eq!(
            [s.train_videos.len(), s.val_videos.len(), s.test_videos.len()],
            [1, 1, 1]
        );
    }

    #[test]
    fn too_few_videos() {
        let t = tracks(2, 3);
        assert!(split_by_video(&t, SplitRatios::default(), 1, &WindowOptions::default()).is_err());
    }

    #[test]
    fn bad_ratios() {
        let t = tracks(5, 1);
        let opts = WindowOptions::default();
        assert!(split_by_video(&t, SplitRatios::new(0.5, 0.5, 0.1), 1, &opts).is_err());
        assert!(split_by_video(&t, SplitRatios::new(1.0, 0.0, 0.0), 1, &opts).is_err());
    }

    proptest! {
        #[test]
        fn is_a_partition(n_videos in 3usize..25, per_video in 1usize..3, seed in any::<u64>()) {
            let t = tracks(n_videos, per_video);
            let s = split_by_video(&t, SplitRatios::new(0.6, 0.2, 0.2), seed, &WindowOptions::default()).unwrap();
            let mut all: Vec<&String> = s.train_videos.iter().chain(&s.val_videos).chain(&s.test_videos).collect();
            all.sort();
            let before = all.len();
            all.dedup();
            prop_assert_eq!(before, all.len());
            prop_assert_eq!(all.len(), n_videos);
            for (name, part) in s.partitions() {
                let vids = match name { "train" => &s.train_videos, "val" => &s.val_videos, _ => &s.test_videos };
                prop_assert!(!vids.is_empty());
                prop_assert!(part.iter().all(|w| vids.contains(&w.video_id)));
            }
            let total = s.train.len() + s.val.len() + s.test.len();
            prop_assert_eq!(total, n_videos * per_video * 31);
        }
    }
}
