use ndarray::{Array2, Array4, ArrayView2, ArrayView4, Axis};

use super::layers::add_into;
use super::params::{Grads, Init, ParamBuilder, ParamHandle, ParamSet};
use crate::scalar::Scalar;

/// 2D convolution over `(N, C, H, W)` via im2col; the N axis holds frames
/// that share weights.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    weight: ParamHandle,
    bias: ParamHandle,
}

pub struct ConvCache<T> {
    cols: Array2<T>,
    in_dim: (usize, usize, usize, usize),
}

impl Conv2d {
    pub fn new<T: Scalar>(
        b: &mut ParamBuilder<'_, T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            weight: b.add(format!("{name}.weight"), &[out_ch, in_ch, kernel, kernel], Init::Uniform(bound)),
            bias: b.add(format!("{name}.bias"), &[out_ch], Init::Uniform(bound)),
        }
    }

    pub fn param_count(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel * self.kernel + self.out_ch
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let f = |n: usize| (n + 2 * self.padding).saturating_sub(self.kernel) / self.stride + 1;
        (f(h), f(w))
    }

    fn weight<'p, T: Scalar>(&self, p: &'p ParamSet<T>) -> ArrayView2<'p, T> {
        let k2 = self.in_ch * self.kernel * self.kernel;
        ArrayView2::from_shape((self.out_ch, k2), p.get(self.weight)).expect("conv weight layout")
    }

    /// For kernel offset `kk` along an axis of input length `len` and output
    /// length `out`: output positions whose tap lands inside the input.
    fn valid(&self, kk: usize, len: usize, out: usize) -> std::ops::Range<usize> {
        let pad = self.padding as isize;
        let s = self.stride as isize;
        let first = ((pad - kk as isize).max(0) + s - 1) / s;
        let last = (len as isize - 1 + pad - kk as isize).div_euclid(s) + 1;
        first as usize..(last.clamp(0, out as isize) as usize).max(first as usize)
    }

    fn im2col<T: Scalar>(&self, x: ArrayView4<T>) -> Array2<T> {
        let (n, c, h, w) = x.dim();
        let (ho, wo) = self.output_hw(h, w);
        let k = self.kernel;
        let kk = c * k * k;
        let xs = x.as_standard_layout();
        let src = xs.as_slice().expect("standard layout");
        let mut cols = Array2::<T>::zeros((n * ho * wo, kk));
        let dst = cols.as_slice_mut().expect("fresh array");
        for b in 0..n {
            for ci in 0..c {
                let plane = &src[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                for ki in 0..k {
                    let rows = self.valid(ki, h, ho);
                    for kj in 0..k {
                        let colsr = self.valid(kj, w, wo);
                        let col = (ci * k + ki) * k + kj;
                        for i in rows.clone() {
                            let y = i * self.stride + ki - self.padding;
                            let base = (b * ho + i) * wo;
                            for j in colsr.clone() {
                                dst[(base + j) * kk + col] = plane[y * w + j * self.stride + kj - self.padding];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    pub fn forward<T: Scalar>(&self, p: &ParamSet<T>, x: ArrayView4<T>) -> (Array4<T>, ConvCache<T>) {
        let (n, _, h, w) = x.dim();
        let (ho, wo) = self.output_hw(h, w);
        let cols = self.im2col(x);
        let mut y_mat = cols.dot(&self.weight(p).t());
        y_mat += &ArrayView2::from_shape((1, self.out_ch), p.get(self.bias)).expect("bias");
        let y = y_mat
            .into_shape_with_order((n, ho, wo, self.out_ch))
            .expect("conv output")
            .permuted_axes([0, 3, 1, 2])
            .as_standard_layout()
            .into_owned();
        (y, ConvCache { cols, in_dim: x.dim() })
    }

    /// Returns the input gradient only when `need_input_grad` is set.
    pub fn backward<T: Scalar>(
        &self,
        p: &ParamSet<T>,
        cache: &ConvCache<T>,
        dy: ArrayView4<T>,
        g: &mut Grads<T>,
        need_input_grad: bool,
    ) -> Option<Array4<T>> {
        let (n, co, ho, wo) = dy.dim();
        let dy_mat = dy
            .permuted_axes([0, 2, 3, 1])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n * ho * wo, co))
            .expect("dy layout");
        let dw = dy_mat.t().dot(&cache.cols);
        add_into(g.get_mut(self.weight), dw.iter());
        let db = dy_mat.sum_axis(Axis(0));
        add_into(g.get_mut(self.bias), db.iter());
        if !need_input_grad {
            return None;
        }
        let dcols = dy_mat.dot(&self.weight(p));
        let dcs = dcols.as_slice().expect("fresh array");
        let (_, c, h, w) = cache.in_dim;
        let k = self.kernel;
        let kk = c * k * k;
        let mut dx = Array4::<T>::zeros(cache.in_dim);
        let dxs = dx.as_slice_mut().expect("fresh array");
        for b in 0..n {
            for ci in 0..c {
                let plane = &mut dxs[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                for ki in 0..k {
                    let rows = self.valid(ki, h, ho);
                    for kj in 0..k {
                        let colsr = self.valid(kj, w, wo);
                        let col = (ci * k + ki) * k + kj;
                        for i in rows.clone() {
                            let y = i * self.stride + ki - self.padding;
                            let base = (b * ho + i) * wo;
                            for j in colsr.clone() {
                                plane[y * w + j * self.stride + kj - self.padding] += dcs[(base + j) * kk + col];
                            }
                        }
                    }
                }
            }
        }
        Some(dx)
    }
}

/// 2×2 average pooling with stride 2; odd trailing rows/columns are dropped.
pub fn avg_pool2<T: Scalar>(x: ArrayView4<T>) -> Array4<T> {
    let (n, c, h, w) = x.dim();
    let (ho, wo) = (h / 2, w / 2);
    let q = T::of(0.25);
    Array4::from_shape_fn((n, c, ho, wo), |(a, b, i, j)| {
        (x[[a, b, 2 * i, 2 * j]] + x[[a, b, 2 * i + 1, 2 * j]] + x[[a, b, 2 * i, 2 * j + 1]] + x[[a, b, 2 * i + 1, 2 * j + 1]]) * q
    })
}

pub fn avg_pool2_backward<T: Scalar>(in_dim: (usize, usize, usize, usize), dy: ArrayView4<T>) -> Array4<T> {
    let mut dx = Array4::<T>::zeros(in_dim);
    let q = T::of(0.25);
    for ((a, b, i, j), &d) in dy.indexed_iter() {
        let v = d * q;
        dx[[a, b, 2 * i, 2 * j]] = v;
        dx[[a, b, 2 * i + 1, 2 * j]] = v;
        dx[[a, b, 2 * i, 2 * j + 1]] = v;
        dx[[a, b, 2 * i + 1, 2 * j + 1]] = v;
    }
    dx
}

pub fn relu4<T: Scalar>(x: &Array4<T>) -> Array4<T> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu4_backward<T: Scalar>(pre: &Array4<T>, dy: ArrayView4<T>) -> Array4<T> {
    let mut dx = dy.to_owned();
    dx.zip_mut_with(pre, |d, &z| {
        if z <= T::zero() {
            *d = T::zero();
        }
    });
    dx
}
