//! Training objective: pixel-averaged multi-class cross-entropy plus a soft
//! dice regularizer applied to samples with pixel-level ground truth.

use serde::{Deserialize, Serialize};

use crate::datamodel::OneHot;
use crate::error::{Error, Result};
use crate::segnet::ProbabilityMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the dice term on ground-truth samples.
    pub dice_weight: f64,
    /// Additive smoothing in the dice ratio.
    pub dice_smoothing: f64,
    /// Probabilities are clamped to at least this before taking the log.
    pub log_epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            dice_weight: 1.0,
            dice_smoothing: 1.0,
            log_epsilon: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dice_weight >= 0.0) {
            return Err(Error::Config("dice_weight must be >= 0".into()));
        }
        if !(self.dice_smoothing > 0.0) {
            return Err(Error::Config("dice_smoothing must be > 0".into()));
        }
        if !(self.log_epsilon > 0.0 && self.log_epsilon < 1e-3) {
            return Err(Error::Config("log_epsilon must be in (0, 1e-3)".into()));
        }
        Ok(())
    }
}

/// Loss value and its gradient with respect to the probabilities.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub value: f64,
    pub cross_entropy: f64,
    pub dice: Option<f64>,
    pub grad: Vec<f64>,
}

/// Unchecked kernels over pixel-major slices. Exposed for gradient checks
/// and for backends that handle validation themselves.
pub mod kernel {
    /// `-(1/P) Σ_j Σ_k t[j,k] · ln(max(p[j,k], eps))`
    pub fn ce_value(pred: &[f64], target: &[f64], channels: usize, eps: f64) -> f64 {
        let pixels = pred.len() / channels;
        let mut acc = 0.0;
        for (p, t) in pred.iter().zip(target) {
            if *t != 0.0 {
                acc += t * p.max(eps).ln();
            }
        }
        -acc / pixels as f64
    }

    pub fn ce_grad(pred: &[f64], target: &[f64], channels: usize, eps: f64) -> Vec<f64> {
        let scale = -1.0 / (pred.len() / channels) as f64;
        pred.iter()
            .zip(target)
            .map(|(&p, &t)| if p > eps { scale * t / p } else { 0.0 })
            .collect()
    }

    /// Per-class sums `(Σ p·t, Σ p, Σ t)` for foreground channels.
    fn dice_sums(pred: &[f64], target: &[f64], channels: usize) -> Vec<(f64, f64, f64)> {
        let mut sums = vec![(0.0, 0.0, 0.0); channels];
        for (p_px, t_px) in pred.chunks_exact(channels).zip(target.chunks_exact(channels)) {
            for c in 1..channels {
                let s = &mut sums[c];
                s.0 += p_px[c] * t_px[c];
                s.1 += p_px[c];
                s.2 += t_px[c];
            }
        }
        sums
    }

    /// Mean over foreground classes of `1 - (2I + s) / (ΣP + ΣT + s)`.
    pub fn dice_value(pred: &[f64], target: &[f64], channels: usize, smoothing: f64) -> f64 {
        let sums = dice_sums(pred, target, channels);
        let k = (channels - 1) as f64;
        sums[1..]
            .iter()
            .map(|&(i, sp, st)| 1.0 - (2.0 * i + smoothing) / (sp + st + smoothing))
            .sum::<f64>()
            / k
    }

    pub fn dice_grad(pred: &[f64], target: &[f64], channels: usize, smoothing: f64) -> Vec<f64> {
        let sums = dice_sums(pred, target, channels);
        let k = (channels - 1) as f64;
        let mut grad = vec![0.0; pred.len()];
        for (g_px, t_px) in grad.chunks_exact_mut(channels).zip(target.chunks_exact(channels)) {
            for c in 1..channels {
                let (i, sp, st) = sums[c];
                let den = sp + st + smoothing;
                let num = 2.0 * i + smoothing;
                g_px[c] = -(2.0 * t_px[c] * den - num) / (den * den) / k;
            }
        }
        grad
    }
}

fn check_shapes(pred: &ProbabilityMap, target: &OneHot) -> Result<()> {
    if !pred.same_shape(target) {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{}x{} vs target {}x{}x{}",
            pred.height, pred.width, pred.channels, target.height, target.width, target.channels
        )));
    }
    if pred.channels < 2 {
        return Err(Error::ShapeMismatch("need at least 2 channels".into()));
    }
    Ok(())
}

/// Pixel-averaged multi-class cross-entropy.
pub fn cross_entropy(pred: &ProbabilityMap, target: &OneHot, cfg: &LossConfig) -> Result<f64> {
    check_shapes(pred, target)?;
    pred.check_normalized()?;
    Ok(kernel::ce_value(
        &pred.data,
        &target.data,
        pred.channels,
        cfg.log_epsilon,
    ))
}

/// Soft dice loss averaged over the foreground classes; lies in `[0, 1)`.
pub fn dice_loss(pred: &ProbabilityMap, target: &OneHot, cfg: &LossConfig) -> Result<f64> {
    check_shapes(pred, target)?;
    Ok(kernel::dice_value(
        &pred.data,
        &target.data,
        pred.channels,
        cfg.dice_smoothing,
    ))
}

/// Cross-entropy, plus `dice_weight · dice` when the target is ground truth.
/// Pseudo-label targets use cross-entropy alone.
pub fn combined_loss(
    pred: &ProbabilityMap,
    target: &OneHot,
    has_pixel_gt: bool,
    cfg: &LossConfig,
) -> Result<f64> {
    let ce = cross_entropy(pred, target, cfg)?;
    if has_pixel_gt {
        Ok(ce + cfg.dice_weight * dice_loss(pred, target, cfg)?)
    } else {
        Ok(ce)
    }
}

/// [`combined_loss`] together with its gradient w.r.t. `pred`.
pub fn combined_loss_grad(
    pred: &ProbabilityMap,
    target: &OneHot,
    has_pixel_gt: bool,
    cfg: &LossConfig,
) -> Result<LossGrad> {
    check_shapes(pred, target)?;
    pred.check_normalized()?;
    let c = pred.channels;
    let ce = kernel::ce_value(&pred.data, &target.data, c, cfg.log_epsilon);
    let mut grad = kernel::ce_grad(&pred.data, &target.data, c, cfg.log_epsilon);
    let mut value = ce;
    let mut dice = None;
    if has_pixel_gt {
        let d = kernel::dice_value(&pred.data, &target.data, c, cfg.dice_smoothing);
        if cfg.dice_weight != 0.0 {
            let dg = kernel::dice_grad(&pred.data, &target.data, c, cfg.dice_smoothing);
            for (g, d) in grad.iter_mut().zip(dg) {
                *g += cfg.dice_weight * d;
            }
        }
        value += cfg.dice_weight * d;
        dice = Some(d);
    }
    Ok(LossGrad {
        value,
        cross_entropy: ce,
        dice,
        grad,
    })
}
