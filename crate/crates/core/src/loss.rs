//! Per-example regression losses; batch losses are means over examples.

use crate::scalar::Scalar;

pub trait Loss<T: Scalar> {
    fn value(&self, pred: T, target: T) -> T;
    /// d value / d pred
    fn derivative(&self, pred: T, target: T) -> T;

    fn batch_mean(&self, preds: &[T], targets: &[T]) -> T {
        let n = T::lit(preds.len() as f64);
        preds.iter().zip(targets).map(|(&p, &t)| self.value(p, t)).sum::<T>() / n
    }
}

/// Huber-style loss: quadratic below `beta`, linear above.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothL1 {
    pub beta: f64,
}

impl Default for SmoothL1 {
    fn default() -> Self {
        Self { beta: 1.0 }
    }
}

impl<T: Scalar> Loss<T> for SmoothL1 {
    fn value(&self, pred: T, target: T) -> T {
        smooth_l1(pred, target, T::lit(self.beta))
    }

    fn derivative(&self, pred: T, target: T) -> T {
        let beta = T::lit(self.beta);
        let d = pred - target;
        if d.abs() < beta {
            d / beta
        } else {
            d.signum()
        }
    }
}

/// `0.5·d²/beta` for `|d| < beta`, else `|d| − 0.5·beta`, with `d = pred − target`.
pub fn smooth_l1<T: Scalar>(pred: T, target: T, beta: T) -> T {
    let half = T::lit(0.5);
    let d = (pred - target).abs();
    if d < beta {
        half * d * d / beta
    } else {
        d - half * beta
    }
}

/// Squared error scaled by `scale` (useful for linearity checks).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaled<L> {
    pub inner: L,
    pub scale: f64,
}

impl<T: Scalar, L: Loss<T>> Loss<T> for Scaled<L> {
    fn value(&self, pred: T, target: T) -> T {
        self.inner.value(pred, target) * T::lit(self.scale)
    }

    fn derivative(&self, pred: T, target: T) -> T {
        self.inner.derivative(pred, target) * T::lit(self.scale)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SquaredError;

impl<T: Scalar> Loss<T> for SquaredError {
    fn value(&self, pred: T, target: T) -> T {
        (pred - target) * (pred - target)
    }

    fn derivative(&self, pred: T, target: T) -> T {
        T::lit(2.0) * (pred - target)
    }
}
