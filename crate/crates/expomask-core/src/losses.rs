//! Training objectives: binary cross-entropy, focal loss, Dice loss and
//! the Dice-BCE combination, each with its analytic gradient in `y_hat`.
//!
//! BCE and focal use mean reduction: the raw pixel sum scales with
//! resolution and would destabilize a fixed learning rate, while the
//! argmin is unchanged. The unreduced sum is still reported on every
//! output for anyone who wants the textbook value. Predictions are
//! clamped to [1e-7, 1-1e-7] before any logarithm.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Clamp bound keeping log terms finite.
pub const PROB_CLAMP: f64 = 1e-7;

/// Focal loss hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

/// Scalar loss with its gradient. `raw_sum` is the unreduced variant: the
/// plain pixel sum for BCE/focal and the per-item sum for the Dice losses.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub loss: f64,
    pub raw_sum: f64,
    pub grad: Tensor,
}

/// Selectable training objective. `Dice` is accepted for diagnostics; the
/// trainable set from the experiment is bce / focal / dice_bce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Bce,
    Focal,
    DiceBce,
    Dice,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Bce => "bce",
            LossKind::Focal => "focal",
            LossKind::DiceBce => "dice_bce",
            LossKind::Dice => "dice",
        }
    }

    pub fn evaluate(self, y: &Tensor, y_hat: &Tensor, focal_params: &FocalParams) -> Result<LossOutput> {
        match self {
            LossKind::Bce => bce(y, y_hat),
            LossKind::Focal => focal(y, y_hat, focal_params),
            LossKind::DiceBce => dice_bce(y, y_hat),
            LossKind::Dice => dice_loss(y, y_hat),
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(LossKind::Bce),
            "focal" => Ok(LossKind::Focal),
            "dice_bce" => Ok(LossKind::DiceBce),
            "dice" => Ok(LossKind::Dice),
            other => Err(Error::InvalidParams(format!(
                "loss must be one of bce|focal|dice_bce|dice, got '{other}'"
            ))),
        }
    }
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn check_pair(y: &Tensor, y_hat: &Tensor, require_binary: bool) -> Result<()> {
    if y.shape() != y_hat.shape() {
        return Err(Error::ShapeMismatch(format!(
            "ground truth {:?} vs prediction {:?}",
            y.shape(),
            y_hat.shape()
        )));
    }
    if require_binary {
        if let Some(&bad) = y.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::NonBinaryGroundTruth(bad));
        }
    }
    Ok(())
}

/// Mean binary cross-entropy:
/// `-mean(y ln p + (1-y) ln(1-p))`, gradient `(p-y) / (p(1-p)) / count`.
pub fn bce(y: &Tensor, y_hat: &Tensor) -> Result<LossOutput> {
    check_pair(y, y_hat, true)?;
    let count = y.len() as f64;
    let mut sum = 0.0;
    let mut grad = y_hat.zeros_like();
    let gd = grad.data_mut();
    for (i, (&t, &p)) in y.data().iter().zip(y_hat.data()).enumerate() {
        let p = clamp_prob(p);
        sum += -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
        // Same value as (p-t)/(p(1-p)); the two-term form keeps the
        // focal reduction at gamma=0 exact down to the last bit.
        gd[i] = (-t / p + (1.0 - t) / (1.0 - p)) / count;
    }
    Ok(LossOutput {
        loss: sum / count,
        raw_sum: sum,
        grad,
    })
}

/// Mean focal loss:
/// `-mean(alpha y (1-p)^gamma ln p + (1-alpha)(1-y) p^gamma ln(1-p))`.
pub fn focal(y: &Tensor, y_hat: &Tensor, params: &FocalParams) -> Result<LossOutput> {
    check_pair(y, y_hat, true)?;
    let (alpha, gamma) = (params.alpha, params.gamma);
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::InvalidParams(format!(
            "focal alpha must be in (0,1), got {alpha}"
        )));
    }
    if gamma < 0.0 {
        return Err(Error::InvalidParams(format!(
            "focal gamma must be >= 0, got {gamma}"
        )));
    }
    let count = y.len() as f64;
    let mut sum = 0.0;
    let mut grad = y_hat.zeros_like();
    let gd = grad.data_mut();
    for (i, (&t, &p)) in y.data().iter().zip(y_hat.data()).enumerate() {
        let p = clamp_prob(p);
        let q = 1.0 - p;
        let ln_p = p.ln();
        let ln_q = q.ln();
        let q_pow = q.powf(gamma);
        let p_pow = p.powf(gamma);
        sum += -(alpha * t * q_pow * ln_p + (1.0 - alpha) * (1.0 - t) * p_pow * ln_q);

        // d/dp of the pixel term, with the gamma-scaled factors written so
        // that gamma = 0 cancels them exactly.
        let pos = alpha * t * (q_pow / p - gamma * q.powf(gamma - 1.0) * ln_p);
        let neg = (1.0 - alpha) * (1.0 - t) * (gamma * p.powf(gamma - 1.0) * ln_q - p_pow / q);
        gd[i] = (-pos - neg) / count;
    }
    Ok(LossOutput {
        loss: sum / count,
        raw_sum: sum,
        grad,
    })
}

/// Smoothed Dice loss `1 - (2 sum(y p) + 1) / (sum y + sum p + 1)`.
///
/// Rank-4 tensors are treated as a batch along axis 0, with the sums taken
/// per item and the item losses averaged; any other rank is a single item.
/// The +1 smoothing keeps the empty-vs-empty case defined (and zero).
pub fn dice_loss(y: &Tensor, y_hat: &Tensor) -> Result<LossOutput> {
    check_pair(y, y_hat, false)?;
    let (items, item_len) = if y.ndim() == 4 {
        (y.shape()[0], y.len() / y.shape()[0])
    } else {
        (1, y.len())
    };

    let mut total = 0.0;
    let mut grad = y_hat.zeros_like();
    let gd = grad.data_mut();
    for k in 0..items {
        let lo = k * item_len;
        let hi = lo + item_len;
        let yk = &y.data()[lo..hi];
        let pk = &y_hat.data()[lo..hi];
        let s_y: f64 = yk.iter().sum();
        let s_p: f64 = pk.iter().sum();
        let s_yp: f64 = yk.iter().zip(pk).map(|(&a, &b)| a * b).sum();
        let denom = s_y + s_p + 1.0;
        let numer = 2.0 * s_yp + 1.0;
        total += 1.0 - numer / denom;
        let denom_sq = denom * denom;
        for (g, &t) in gd[lo..hi].iter_mut().zip(yk) {
            *g = -(2.0 * t * denom - numer) / denom_sq / items as f64;
        }
    }
    Ok(LossOutput {
        loss: total / items as f64,
        raw_sum: total,
        grad,
    })
}

/// Combo loss: Dice plus BCE, gradients added.
pub fn dice_bce(y: &Tensor, y_hat: &Tensor) -> Result<LossOutput> {
    let b = bce(y, y_hat)?;
    let d = dice_loss(y, y_hat)?;
    let mut grad = d.grad;
    grad.add_assign(&b.grad)?;
    Ok(LossOutput {
        loss: d.loss + b.loss,
        raw_sum: d.raw_sum + b.raw_sum,
        grad,
    })
}
