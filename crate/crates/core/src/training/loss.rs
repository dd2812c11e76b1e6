//! Class-weighted binary cross-entropy on raw logits.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `ln(1 + e^x)` without overflow.
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn check<T: Scalar>(logit: T, label: u8, w_c: T) -> Result<()> {
    if !logit.is_finite() {
        return Err(Error::NonFinite(format!("logit {logit}")));
    }
    if !(w_c > T::zero() && w_c.is_finite()) {
        return Err(Error::Config(format!("class weight must be positive, got {w_c}")));
    }
    if label > 1 {
        return Err(Error::Config(format!("label must be 0 or 1, got {label}")));
    }
    Ok(())
}

/// `-[w_c·y·ln σ(z) + (1-y)·ln(1-σ(z))]`, using `-ln σ(z) = softplus(-z)`.
pub fn weighted_bce<T: Scalar>(logit: T, label: u8, w_c: T) -> Result<T> {
    check(logit, label, w_c)?;
    Ok(if label == 1 { w_c * softplus(-logit) } else { softplus(logit) })
}

/// Derivative of [`weighted_bce`] with respect to the logit.
pub fn weighted_bce_grad<T: Scalar>(logit: T, label: u8, w_c: T) -> Result<T> {
    check(logit, label, w_c)?;
    let s = sigmoid(logit);
    Ok(if label == 1 { w_c * (s - T::one()) } else { s })
}
