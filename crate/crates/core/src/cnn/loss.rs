//! Masked offset regression plus binary cross-entropy on existence flags.
//!
//! For predictions `η̂` and labels `η` in the network layout `N × 3C × I × J`:
//!
//! * `L1 = (1/N) Σ μ·‖(Δτ̂, Δα̂) − (Δτ, Δα)‖²`, masked by the label flag;
//! * `L2 = mean over all slots of −[μ log μ̂ + (1−μ) log(1−μ̂)]`.

use ndarray::{Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::encoding::EncodedLabel;
use crate::error::{Error, Result};
use crate::scalar::{from_usize, lit, Real};

use super::model::label_to_chw;

/// Clamp applied to predicted flags before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub offsets: f64,
    pub flags: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { offsets: 1.0, flags: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub total: T,
    /// Offset term before weighting.
    pub l1: T,
    /// Flag term before weighting.
    pub l2: T,
}

fn check_shapes<T: Real>(pred: &Array4<T>, label: &Array4<T>) -> Result<()> {
    if pred.dim() != label.dim() || pred.dim().1 % 3 != 0 {
        return Err(Error::Validation(format!("loss shapes {:?} and {:?} are incompatible", pred.dim(), label.dim())));
    }
    Ok(())
}

/// Loss of a batch in network layout.
pub fn batch_loss<T: Real>(pred: &Array4<T>, label: &Array4<T>, weights: LossWeights) -> Result<LossBreakdown<T>> {
    check_shapes(pred, label)?;
    let (n, depth, rows, cols) = pred.dim();
    let eps = lit::<T>(PROB_EPS);
    let mut l1 = T::zero();
    let mut l2 = T::zero();
    for slot in 0..depth / 3 {
        let mu_hat = pred.index_axis(Axis(1), 3 * slot);
        let mu = label.index_axis(Axis(1), 3 * slot);
        for (idx, &m) in mu.indexed_iter() {
            let q = mu_hat[idx].max(eps).min(T::one() - eps);
            l2 -= m * q.ln() + (T::one() - m) * (T::one() - q).ln();
            if m != T::zero() {
                let (b, i, j) = idx;
                let dt = pred[[b, 3 * slot + 1, i, j]] - label[[b, 3 * slot + 1, i, j]];
                let da = pred[[b, 3 * slot + 2, i, j]] - label[[b, 3 * slot + 2, i, j]];
                l1 += m * (dt * dt + da * da);
            }
        }
    }
    let l1 = l1 / from_usize(n);
    let l2 = l2 / from_usize(n * rows * cols * (depth / 3));
    Ok(LossBreakdown { total: lit::<T>(weights.offsets) * l1 + lit::<T>(weights.flags) * l2, l1, l2 })
}

/// Loss of a single prediction against its label.
pub fn loss<T: Real>(pred: &EncodedLabel<T>, label: &EncodedLabel<T>, weights: LossWeights) -> Result<LossBreakdown<T>> {
    let p = label_to_chw(pred).insert_axis(Axis(0));
    let l = label_to_chw(label).insert_axis(Axis(0));
    batch_loss(&p, &l, weights)
}

/// Gradient of [`batch_loss`] with respect to the pre-sigmoid logits, given
/// the sigmoid outputs `pred`.
pub fn batch_loss_grad_logits<T: Real>(pred: &Array4<T>, label: &Array4<T>, weights: LossWeights) -> Result<Array4<T>> {
    check_shapes(pred, label)?;
    let (n, depth, rows, cols) = pred.dim();
    let flag_scale = lit::<T>(weights.flags) / from_usize(n * rows * cols * (depth / 3));
    let off_scale = lit::<T>(2.0 * weights.offsets) / from_usize(n);
    let mut grad = Array4::zeros(pred.dim());
    for ((b, c, i, j), g) in grad.indexed_iter_mut() {
        let slot = c / 3;
        let mu = label[[b, 3 * slot, i, j]];
        let y = pred[[b, c, i, j]];
        *g = if c % 3 == 0 {
            flag_scale * (y - mu)
        } else if mu != T::zero() {
            off_scale * mu * (y - label[[b, c, i, j]]) * y * (T::one() - y)
        } else {
            T::zero()
        };
    }
    Ok(grad)
}
