use std::path::PathBuf;

use image::RgbImage;
use ndarray::Array3;

use crate::error::{Error, Result};

/// Supplies resized pedestrian crops for `(video_id, frame_index)` references.
///
/// Crops are `out_h × out_w × 3` with raw pixel values in `[0, 255]`.
pub trait FrameSource: Send + Sync {
    fn crop(
        &self,
        video_id: &str,
        frame_index: u32,
        bbox: &[f64; 4],
        out_h: usize,
        out_w: usize,
    ) -> Result<Array3<f32>>;
}

/// Crops `bbox` out of a `width × height` image given by `pixel` and resizes it
/// to `out_h × out_w` with bilinear interpolation (aspect ratio not preserved).
///
/// Sample positions follow the half-pixel convention, so a box covering exactly
/// `out_w × out_h` whole pixels reproduces them unchanged.
pub fn crop_resize_with<F>(
    width: usize,
    height: usize,
    pixel: F,
    bbox: &[f64; 4],
    out_h: usize,
    out_w: usize,
) -> Result<Array3<f32>>
where
    F: Fn(usize, usize) -> [f32; 3],
{
    let x1 = bbox[0].clamp(0.0, width as f64);
    let x2 = bbox[2].clamp(0.0, width as f64);
    let y1 = bbox[1].clamp(0.0, height as f64);
    let y2 = bbox[3].clamp(0.0, height as f64);
    if !(x2 > x1 && y2 > y1) || width == 0 || height == 0 {
        return Err(Error::DegenerateCrop(format!("{bbox:?}")));
    }
    let sx = (x2 - x1) / out_w as f64;
    let sy = (y2 - y1) / out_h as f64;
    // Interpolation stays within the clipped box.
    let x_lo = x1.floor();
    let x_hi = (x2.ceil() - 1.0).max(x_lo);
    let y_lo = y1.floor();
    let y_hi = (y2.ceil() - 1.0).max(y_lo);

    let taps = |lo_edge: f64, scale: f64, lo: f64, hi: f64, n: usize| -> Vec<(usize, usize, f32)> {
        (0..n)
            .map(|i| {
                let c = (lo_edge + (i as f64 + 0.5) * scale - 0.5).clamp(lo, hi);
                let i0 = c.floor();
                let frac = c - i0;
                let i1 = (i0 + 1.0).min(hi);
                (i0 as usize, i1 as usize, frac as f32)
            })
            .collect()
    };
    let xs = taps(x1, sx, x_lo, x_hi, out_w);
    let ys = taps(y1, sy, y_lo, y_hi, out_h);

    let mut out = Array3::<f32>::zeros((out_h, out_w, 3));
    for (r, &(y0, y1i, fy)) in ys.iter().enumerate() {
        for (c, &(x0, x1i, fx)) in xs.iter().enumerate() {
            let p00 = pixel(x0, y0);
            let mut v = p00.map(|p| p * (1.0 - fx) * (1.0 - fy));
            for (px, w) in [
                ((x1i, y0), fx * (1.0 - fy)),
                ((x0, y1i), (1.0 - fx) * fy),
                ((x1i, y1i), fx * fy),
            ] {
                if w != 0.0 {
                    let p = pixel(px.0, px.1);
                    for k in 0..3 {
                        v[k] += p[k] * w;
                    }
                }
            }
            for k in 0..3 {
                out[[r, c, k]] = v[k];
            }
        }
    }
    Ok(out)
}

/// [`crop_resize_with`] over a decoded RGB image.
pub fn crop_resize(frame: &RgbImage, bbox: &[f64; 4], out_h: usize, out_w: usize) -> Result<Array3<f32>> {
    crop_resize_with(
        frame.width() as usize,
        frame.height() as usize,
        |x, y| frame.get_pixel(x as u32, y as u32).0.map(f32::from),
        bbox,
        out_h,
        out_w,
    )
}

/// Frames stored as `<root>/<video_id>/<frame_index:06>.png`.
///
/// Box coordinates refer to the full `image_width × image_height` frame; stored
/// frames may be downscaled and boxes are rescaled accordingly.
#[derive(Clone, Debug)]
pub struct DirectoryFrames {
    root: PathBuf,
    image_width: f64,
    image_height: f64,
}

impl DirectoryFrames {
    pub fn new(root: impl Into<PathBuf>, image_width: f64, image_height: f64) -> Self {
        DirectoryFrames {
            root: root.into(),
            image_width,
            image_height,
        }
    }

    pub fn frame_path(&self, video_id: &str, frame_index: u32) -> PathBuf {
        self.root.join(video_id).join(format!("{frame_index:06}.png"))
    }
}

impl FrameSource for DirectoryFrames {
    fn crop(&self, video_id: &str, frame_index: u32, bbox: &[f64; 4], out_h: usize, out_w: usize) -> Result<Array3<f32>> {
        let path = self.frame_path(video_id, frame_index);
        let img = image::open(&path)
            .map_err(|e| Error::FrameUnavailable {
                video_id: video_id.to_string(),
                frame_index,
                reason: format!("{}: {e}", path.display()),
            })?
            .to_rgb8();
        let kx = f64::from(img.width()) / self.image_width;
        let ky = f64::from(img.height()) / self.image_height;
        let scaled = [bbox[0] * kx, bbox[1] * ky, bbox[2] * kx, bbox[3] * ky];
        crop_resize(&img, &scaled, out_h, out_w)
            .map_err(|_| Error::DegenerateCrop(format!("{video_id}@{frame_index}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| image::Rgb([(x % 251) as u8, (y % 251) as u8, ((x * 7 + y * 3) % 256) as u8]))
    }

    #[test]
    fn whole_pixel_box_is_identity() {
        let img = pattern(300, 200);
        let out = crop_resize(&img, &[40.0, 30.0, 152.0, 142.0], 112, 112).unwrap();
        for r in 0..112 {
            for c in 0..112 {
                let p = img.get_pixel(40 + c as u32, 30 + r as u32).0;
                for k in 0..3 {
                    assert_eq!(out[[r, c, k]], f32::from(p[k]));
                }
            }
        }
    }

    #[test]
    fn uniform_crop_stays_uniform() {
        let img = RgbImage::from_pixel(500, 500, image::Rgb([17, 99, 230]));
        let out = crop_resize(&img, &[10.0, 20.0, 234.0, 244.0], 112, 112).unwrap();
        assert!(out.slice(ndarray::s![.., .., 0]).iter().all(|&v| (v - 17.0).abs() < 1e-4));
        assert!(out.slice(ndarray::s![.., .., 2]).iter().all(|&v| (v - 230.0).abs() < 1e-4));
    }

    #[test]
    fn non_square_box_is_warped_to_square() {
        let img = pattern(400, 400);
        let out = crop_resize(&img, &[50.0, 20.0, 150.0, 320.0], 112, 112).unwrap();
        assert_eq!(out.dim(), (112, 112, 3));
    }

    #[test]
    fn zero_area_after_clipping_fails() {
        let img = pattern(100, 100);
        assert!(matches!(
            crop_resize(&img, &[120.0, 10.0, 150.0, 50.0], 8, 8),
            Err(Error::DegenerateCrop(_))
        ));
    }

    #[test]
    fn directory_source_reports_missing_frames() {
        let dir = tempfile::tempdir().unwrap();
        let src = DirectoryFrames::new(dir.path(), 1920.0, 1080.0);
        let err = src.crop("vid", 7, &[0.0, 0.0, 10.0, 10.0], 4, 4).unwrap_err();
        assert!(matches!(err, Error::FrameUnavailable { frame_index: 7, .. }), "{err}");

        std::fs::create_dir_all(dir.path().join("vid")).unwrap();
        RgbImage::from_pixel(240, 135, image::Rgb([200, 10, 10]))
            .save(src.frame_path("vid", 7))
            .unwrap();
        let crop = src.crop("vid", 7, &[100.0, 100.0, 300.0, 500.0], 4, 4).unwrap();
        assert!(crop.slice(ndarray::s![.., .., 0]).iter().all(|&v| (v - 200.0).abs() < 1e-3));
    }
}
