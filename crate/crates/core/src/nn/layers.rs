//! Dense layers with explicit backward passes.
//!
//! Every `backward` accumulates parameter gradients into a [`Grads`] buffer and
//! returns the gradient with respect to the layer input.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::params::{Grads, Init, ParamBuilder, ParamHandle, ParamSet};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    weight: ParamHandle,
    bias: ParamHandle,
}

impl Linear {
    /// Weight and bias uniform in `±1/sqrt(in_dim)`.
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Linear {
            in_dim,
            out_dim,
            weight: b.add(format!("{name}.weight"), &[out_dim, in_dim], Init::Uniform(bound)),
            bias: b.add(format!("{name}.bias"), &[out_dim], Init::Uniform(bound)),
        }
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }

    pub fn weight<'p, T: Scalar>(&self, p: &'p ParamSet<T>) -> ArrayView2<'p, T> {
        ArrayView2::from_shape((self.out_dim, self.in_dim), p.get(self.weight)).expect("weight layout")
    }

    pub fn bias<'p, T: Scalar>(&self, p: &'p ParamSet<T>) -> ArrayView1<'p, T> {
        ArrayView1::from(p.get(self.bias))
    }

    pub fn weight_handle(&self) -> ParamHandle {
        self.weight
    }

    pub fn bias_handle(&self) -> ParamHandle {
        self.bias
    }

    /// `x`: `n × in` → `n × out`.
    pub fn forward<T: Scalar>(&self, p: &ParamSet<T>, x: ArrayView2<T>) -> Array2<T> {
        let mut y = x.dot(&self.weight(p).t());
        y += &self.bias(p);
        y
    }

    pub fn forward_vec<T: Scalar>(&self, p: &ParamSet<T>, x: ArrayView1<T>) -> Array1<T> {
        self.weight(p).dot(&x) + self.bias(p)
    }

    pub fn backward<T: Scalar>(&self, p: &ParamSet<T>, x: ArrayView2<T>, dy: ArrayView2<T>, g: &mut Grads<T>) -> Array2<T> {
        let dw = dy.t().dot(&x);
        add_into(g.get_mut(self.weight), dw.iter());
        let db = dy.sum_axis(Axis(0));
        add_into(g.get_mut(self.bias), db.iter());
        dy.dot(&self.weight(p))
    }

    pub fn backward_vec<T: Scalar>(&self, p: &ParamSet<T>, x: ArrayView1<T>, dy: ArrayView1<T>, g: &mut Grads<T>) -> Array1<T> {
        let x2 = x.insert_axis(Axis(0));
        let dy2 = dy.insert_axis(Axis(0));
        self.backward(p, x2, dy2, g).remove_axis(Axis(0))
    }
}

pub(crate) fn add_into<'a, T: Scalar>(dst: &mut [T], src: impl Iterator<Item = &'a T>) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Layer normalization over the last axis with learned scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub dim: usize,
    pub eps: f64,
    gamma: ParamHandle,
    beta: ParamHandle,
}

pub struct LayerNormCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

impl LayerNorm {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, dim: usize) -> Self {
        LayerNorm {
            dim,
            eps: 1e-5,
            gamma: b.add(format!("{name}.weight"), &[dim], Init::Ones),
            beta: b.add(format!("{name}.bias"), &[dim], Init::Zeros),
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.dim
    }

    pub fn forward<T: Scalar>(&self, p: &ParamSet<T>, x: ArrayView2<T>) -> (Array2<T>, LayerNormCache<T>) {
        let n = T::of(self.dim as f64);
        let eps = T::of(self.eps);
        let gamma = ArrayView1::from(p.get(self.gamma));
        let beta = ArrayView1::from(p.get(self.beta));
        let mut xhat = x.to_owned();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            row.mapv_inplace(|v| v * is);
            *s = is;
        }
        let y = &xhat * &gamma + beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward<T: Scalar>(&self, p: &ParamSet<T>, cache: &LayerNormCache<T>, dy: ArrayView2<T>, g: &mut Grads<T>) -> Array2<T> {
        let n = T::of(self.dim as f64);
        let gamma = ArrayView1::from(p.get(self.gamma));
        let dgamma = (&dy * &cache.xhat).sum_axis(Axis(0));
        add_into(g.get_mut(self.gamma), dgamma.iter());
        let dbeta = dy.sum_axis(Axis(0));
        add_into(g.get_mut(self.beta), dbeta.iter());

        let dxhat = &dy * &gamma;
        let mut dx = Array2::zeros(dy.raw_dim());
        for i in 0..dy.nrows() {
            let dxh = dxhat.row(i);
            let xh = cache.xhat.row(i);
            let sum_d = dxh.sum();
            let sum_dx = dxh.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>();
            let k = cache.inv_std[i] / n;
            for j in 0..self.dim {
                dx[[i, j]] = k * (n * dxh[j] - sum_d - xh[j] * sum_dx);
            }
        }
        dx
    }
}

pub fn relu<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `dy` where the pre-activation was positive.
pub fn relu_backward<T: Scalar>(pre: &Array2<T>, dy: ArrayView2<T>) -> Array2<T> {
    let mut dx = dy.to_owned();
    dx.zip_mut_with(pre, |d, &z| {
        if z <= T::zero() {
            *d = T::zero();
        }
    });
    dx
}

/// Row-wise softmax, stabilized by the row maximum.
pub fn softmax_rows<T: Scalar>(x: &mut Array2<T>) {
    for mut row in x.rows_mut() {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}
