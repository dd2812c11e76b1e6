//! Learnable spatio-temporal shift.
//!
//! Each channel `k` of a `(T, C, H, W)` feature map is translated by its own
//! continuous offsets `(dt, dy, dx)`: `out[t, k, y, x] = in(t - dt, k, y - dy, x - dx)`,
//! evaluated by trilinear interpolation between neighbouring positions. Reads
//! outside the map return zero. Because offsets are shared by all positions of a
//! channel, every output is a fixed 8-tap stencil of the input, which makes the
//! operation differentiable in both the input and the offsets (except exactly at
//! integer offsets, where the offset gradient is one-sided).

use ndarray::{Array2, Array3, Array4, ArrayView2, ArrayView3, ArrayView4};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Interpolation taps along one axis for offset `d = base + frac`.
/// Output index `p` reads `(1 - frac) · in[p - base] + frac · in[p - base - 1]`.
#[derive(Clone, Copy)]
struct Taps<T> {
    base: isize,
    weight: [T; 2],
}

impl<T: Scalar> Taps<T> {
    fn new(offset: T) -> Self {
        let base = offset.floor();
        let frac = offset - base;
        Taps {
            base: base.to_isize().expect("finite offset"),
            weight: [T::one() - frac, frac],
        }
    }

    /// Source index for output `p` and tap `i`, if in range.
    #[inline]
    fn source(&self, p: usize, i: usize, len: usize) -> Option<usize> {
        let s = p as isize - self.base - i as isize;
        (s >= 0 && s < len as isize).then_some(s as usize)
    }

    /// Output range `lo..hi` whose tap-`i` sources are in range, and the source
    /// start for `lo`.
    #[inline]
    fn span(&self, i: usize, len: usize) -> Option<(usize, usize, usize)> {
        let shift = self.base + i as isize;
        let lo = shift.clamp(0, len as isize) as usize;
        let hi = (len as isize + shift).clamp(0, len as isize) as usize;
        (lo < hi).then(|| (lo, hi, (lo as isize - shift) as usize))
    }
}

// d weight[i] / d offset
const TAP_SLOPE: [f64; 2] = [-1.0, 1.0];

fn check(x_dim: (usize, usize, usize, usize), offsets: ArrayView2<'_, impl Scalar>) -> Result<()> {
    if offsets.dim() != (x_dim.1, 3) {
        return Err(Error::shape("shift offsets", (x_dim.1, 3), offsets.dim()));
    }
    if offsets.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("shift offsets".into()));
    }
    Ok(())
}

fn channel_taps<T: Scalar>(offsets: ArrayView2<T>, k: usize) -> [Taps<T>; 3] {
    [Taps::new(offsets[[k, 0]]), Taps::new(offsets[[k, 1]]), Taps::new(offsets[[k, 2]])]
}

/// Shifts every channel of `x` (`T × C × H × W`) by its row of `offsets`
/// (`C × 3`, columns `dt, dy, dx`).
pub fn learnable_shift<T: Scalar>(x: ArrayView4<T>, offsets: ArrayView2<T>) -> Result<Array4<T>> {
    check(x.dim(), offsets)?;
    let (nt, nc, nh, nw) = x.dim();
    let xs = x.as_standard_layout();
    let src = xs.as_slice().expect("standard layout");
    let mut out = Array4::<T>::zeros(x.raw_dim());
    let dst = out.as_slice_mut().expect("fresh array");
    let row = |t: usize, k: usize, y: usize| ((t * nc + k) * nh + y) * nw;
    for k in 0..nc {
        let [at, ay, ax] = channel_taps(offsets, k);
        for t in 0..nt {
            for i in 0..2 {
                let wt = at.weight[i];
                if wt == T::zero() {
                    continue;
                }
                let Some(st) = at.source(t, i, nt) else { continue };
                for y in 0..nh {
                    for j in 0..2 {
                        let wty = wt * ay.weight[j];
                        if wty == T::zero() {
                            continue;
                        }
                        let Some(sy) = ay.source(y, j, nh) else { continue };
                        let (d0, s0) = (row(t, k, y), row(st, k, sy));
                        for l in 0..2 {
                            let w = wty * ax.weight[l];
                            if w == T::zero() {
                                continue;
                            }
                            let Some((lo, hi, s_lo)) = ax.span(l, nw) else { continue };
                            let n = hi - lo;
                            for (o, &v) in dst[d0 + lo..d0 + hi].iter_mut().zip(&src[s0 + s_lo..s0 + s_lo + n]) {
                                *o += w * v;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`learnable_shift`] with respect to the input and the offsets.
pub fn learnable_shift_backward<T: Scalar>(
    x: ArrayView4<T>,
    offsets: ArrayView2<T>,
    dy: ArrayView4<T>,
) -> Result<(Array4<T>, Array2<T>)> {
    check(x.dim(), offsets)?;
    if dy.dim() != x.dim() {
        return Err(Error::shape("shift output gradient", x.dim(), dy.dim()));
    }
    let (nt, nc, nh, nw) = x.dim();
    let slope = TAP_SLOPE.map(T::of);
    let xs = x.as_standard_layout();
    let src = xs.as_slice().expect("standard layout");
    let dys = dy.as_standard_layout();
    let g = dys.as_slice().expect("standard layout");
    let mut dx = Array4::<T>::zeros(x.raw_dim());
    let dxs = dx.as_slice_mut().expect("fresh array");
    let mut doff = Array2::<T>::zeros((nc, 3));
    let row = |t: usize, k: usize, y: usize| ((t * nc + k) * nh + y) * nw;
    for k in 0..nc {
        let [at, ay, ax] = channel_taps(offsets, k);
        let (mut gt, mut gy, mut gx) = (T::zero(), T::zero(), T::zero());
        for t in 0..nt {
            for i in 0..2 {
                let Some(st) = at.source(t, i, nt) else { continue };
                for y in 0..nh {
                    for j in 0..2 {
                        let Some(sy) = ay.source(y, j, nh) else { continue };
                        let (d0, s0) = (row(t, k, y), row(st, k, sy));
                        for l in 0..2 {
                            let Some((lo, hi, s_lo)) = ax.span(l, nw) else { continue };
                            let n = hi - lo;
                            let w = at.weight[i] * ay.weight[j] * ax.weight[l];
                            let gout = &g[d0 + lo..d0 + hi];
                            let mut acc = T::zero();
                            for ((d, &v), &go) in dxs[s0 + s_lo..s0 + s_lo + n].iter_mut().zip(&src[s0 + s_lo..s0 + s_lo + n]).zip(gout) {
                                *d += go * w;
                                acc += go * v;
                            }
                            gt += slope[i] * ay.weight[j] * ax.weight[l] * acc;
                            gy += at.weight[i] * slope[j] * ax.weight[l] * acc;
                            gx += at.weight[i] * ay.weight[j] * slope[l] * acc;
                        }
                    }
                }
            }
        }
        doff[[k, 0]] = gt;
        doff[[k, 1]] = gy;
        doff[[k, 2]] = gx;
    }
    Ok((dx, doff))
}

/// [`learnable_shift`] on a channel-stacked `C × H × W` input whose channels are
/// `frames` consecutive groups of `C / frames`; the temporal offset moves content
/// between groups.
pub fn shift_stacked<T: Scalar>(x: ArrayView3<T>, frames: usize, offsets: ArrayView2<T>) -> Result<Array3<T>> {
    let (c, h, w) = x.dim();
    if frames == 0 || c % frames != 0 {
        return Err(Error::shape("stacked channels", format!("multiple of {frames}"), c));
    }
    let x4 = x
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((frames, c / frames, h, w))
        .expect("divisible channels");
    let y = learnable_shift(x4.view(), offsets)?;
    Ok(y.into_shape_with_order((c, h, w)).expect("same element count"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, s};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_x(rng: &mut ChaCha8Rng, dim: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_offsets_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_x(&mut rng, (3, 4, 5, 6));
        let y = learnable_shift(x.view(), Array2::zeros((4, 3)).view()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn integer_width_shift_moves_columns() {
        let x = Array4::from_shape_fn((1, 2, 2, 4), |(_, c, i, j)| (c * 100 + i * 10 + j + 1) as f64);
        let off = arr2(&[[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]);
        let y = learnable_shift(x.view(), off.view()).unwrap();
        for i in 0..2 {
            assert_eq!(y[[0, 0, i, 0]], 0.0);
            for j in 1..4 {
                assert_eq!(y[[0, 0, i, j]], x[[0, 0, i, j - 1]]);
            }
        }
        assert_eq!(y.slice(s![.., 1, .., ..]), x.slice(s![.., 1, .., ..]));
    }

    #[test]
    fn half_offset_interpolates_midpoint() {
        let (a, b) = (3.0, 7.0);
        let x = Array4::from_shape_vec((1, 1, 1, 2), vec![a, b]).unwrap();
        let y = learnable_shift(x.view(), arr2(&[[0.0, 0.0, 0.5]]).view()).unwrap();
        assert_eq!(y[[0, 0, 0, 1]], (a + b) / 2.0);
        assert_eq!(y[[0, 0, 0, 0]], a / 2.0);
    }

    #[test]
    fn shift_then_unshift_recovers_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_x(&mut rng, (4, 2, 6, 7));
        let k = 2.0;
        let fwd = arr2(&[[1.0, k, -k], [-1.0, 0.0, k]]);
        let back = fwd.mapv(|v: f64| -v);
        let y = learnable_shift(learnable_shift(x.view(), fwd.view()).unwrap().view(), back.view()).unwrap();
        // Channel 0 moved by (1, 2, -2): interior t in 0..3, y in 0..4, x in 2..7.
        assert_eq!(y.slice(s![0..3, 0, 0..4, 2..7]), x.slice(s![0..3, 0, 0..4, 2..7]));
        assert_eq!(y.slice(s![1..4, 1, .., 0..5]), x.slice(s![1..4, 1, .., 0..5]));
        assert_eq!(y[[3, 0, 0, 2]], 0.0);
    }

    #[test]
    fn rejects_bad_offsets() {
        let x = Array4::<f64>::zeros((1, 2, 3, 3));
        assert!(learnable_shift(x.view(), Array2::zeros((3, 3)).view()).is_err());
        let bad = arr2(&[[f64::NAN, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        assert!(matches!(learnable_shift(x.view(), bad.view()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn stacked_layout_shifts_between_frame_groups() {
        // Two frames of one channel each; temporal offset 1 moves frame 0 into frame 1.
        let x = Array3::from_shape_fn((2, 2, 2), |(c, i, j)| (c * 4 + i * 2 + j + 1) as f64);
        let y = shift_stacked(x.view(), 2, arr2(&[[1.0, 0.0, 0.0]]).view()).unwrap();
        assert_eq!(y.slice(s![1, .., ..]), x.slice(s![0, .., ..]));
        assert!(y.slice(s![0, .., ..]).iter().all(|&v| v == 0.0));
        assert!(shift_stacked(x.view(), 3, arr2(&[[0.0, 0.0, 0.0]]).view()).is_err());
    }

    #[test]
    fn parameter_count_is_three_per_channel() {
        // The shift layer is entirely described by its C × 3 offset table.
        let x = Array4::<f64>::zeros((2, 5, 3, 3));
        let (_, doff) = learnable_shift_backward(x.view(), Array2::zeros((5, 3)).view(), x.view()).unwrap();
        assert_eq!(doff.len(), 3 * 5);
    }
}
