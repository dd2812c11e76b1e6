use ndarray::{s, Array2, ArrayView2, Axis};

use super::layers::{softmax_rows, Linear};
use super::params::{Grads, ParamBuilder, ParamSet};
use crate::scalar::Scalar;

/// Scaled dot-product self-attention with `heads` parallel heads.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub dim: usize,
    pub heads: usize,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
}

pub struct MhaCache<T> {
    x: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    /// Per-head `n × n` attention weights; rows sum to one.
    pub attn: Vec<Array2<T>>,
    concat: Array2<T>,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, dim: usize, heads: usize) -> Self {
        assert!(heads > 0 && dim.is_multiple_of(heads), "dim must be divisible by heads");
        MultiHeadAttention {
            dim,
            heads,
            q: Linear::new(b, &format!("{name}.q"), dim, dim),
            k: Linear::new(b, &format!("{name}.k"), dim, dim),
            v: Linear::new(b, &format!("{name}.v"), dim, dim),
            out: Linear::new(b, &format!("{name}.out"), dim, dim),
        }
    }

    pub fn param_count(&self) -> usize {
        4 * (self.dim * self.dim + self.dim)
    }

    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn forward<T: Scalar>(&self, p: &ParamSet<T>, x: ArrayView2<T>) -> (Array2<T>, MhaCache<T>) {
        let q = self.q.forward(p, x);
        let k = self.k.forward(p, x);
        let v = self.v.forward(p, x);
        let dh = self.head_dim();
        let scale = T::one() / T::of(dh as f64).sqrt();
        let mut concat = Array2::zeros((x.nrows(), self.dim));
        let mut attn = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let r = h * dh..(h + 1) * dh;
            let qh = q.slice(s![.., r.clone()]);
            let kh = k.slice(s![.., r.clone()]);
            let vh = v.slice(s![.., r.clone()]);
            let mut a = qh.dot(&kh.t()) * scale;
            softmax_rows(&mut a);
            concat.slice_mut(s![.., r]).assign(&a.dot(&vh));
            attn.push(a);
        }
        let y = self.out.forward(p, concat.view());
        (
            y,
            MhaCache {
                x: x.to_owned(),
                q,
                k,
                v,
                attn,
                concat,
            },
        )
    }

    pub fn backward<T: Scalar>(&self, p: &ParamSet<T>, c: &MhaCache<T>, dy: ArrayView2<T>, g: &mut Grads<T>) -> Array2<T> {
        let dconcat = self.out.backward(p, c.concat.view(), dy, g);
        let dh = self.head_dim();
        let scale = T::one() / T::of(dh as f64).sqrt();
        let mut dq = Array2::zeros(c.q.raw_dim());
        let mut dk = Array2::zeros(c.k.raw_dim());
        let mut dv = Array2::zeros(c.v.raw_dim());
        for (h, a) in c.attn.iter().enumerate() {
            let r = h * dh..(h + 1) * dh;
            let qh = c.q.slice(s![.., r.clone()]);
            let kh = c.k.slice(s![.., r.clone()]);
            let vh = c.v.slice(s![.., r.clone()]);
            let doh = dconcat.slice(s![.., r.clone()]);
            let da = doh.dot(&vh.t());
            dv.slice_mut(s![.., r.clone()]).assign(&a.t().dot(&doh));
            let row_dot = (&da * a).sum_axis(Axis(1)).insert_axis(Axis(1));
            let ds = (&da - &row_dot) * a * scale;
            dq.slice_mut(s![.., r.clone()]).assign(&ds.dot(&kh));
            dk.slice_mut(s![.., r]).assign(&ds.t().dot(&qh));
        }
        let mut dx = self.q.backward(p, c.x.view(), dq.view(), g);
        dx += &self.k.backward(p, c.x.view(), dk.view(), g);
        dx += &self.v.backward(p, c.x.view(), dv.view(), g);
        dx
    }
}
