//! Photometric loss: weighted L1 plus weighted structural dissimilarity.

use serde::{Deserialize, Serialize};

use super::ssim::GaussianWindow;
use crate::error::{Error, Result};
use crate::scene::{ImageBuffer, MaskMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub l1: f64,
    pub dssim: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { l1: 0.8, dssim: 0.2 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.l1 >= 0.0 && self.dssim >= 0.0) || (self.l1 + self.dssim - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "loss weights must be non-negative and sum to 1, got {} and {}",
                self.l1, self.dssim
            )));
        }
        Ok(())
    }
}

fn check(target: &ImageBuffer, rendered: &ImageBuffer, weights: &MaskMap) -> Result<f64> {
    if target.dims() != rendered.dims() {
        return Err(Error::dims("rendered image", target.dims(), rendered.dims()));
    }
    if weights.dims() != target.dims() {
        return Err(Error::dims("weight map", target.dims(), weights.dims()));
    }
    let total: f64 = weights.data.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroWeights);
    }
    Ok(total)
}

/// `λ1 · ΣW|Î−I| / (3ΣW) + λ2 · (1 − SSIM_W) / 2`, where `SSIM_W` is the
/// W-weighted mean of the per-pixel SSIM map.
pub fn loss_weighted(target: &ImageBuffer, rendered: &ImageBuffer, weights: &MaskMap, lambda: LossWeights) -> Result<f64> {
    let win = GaussianWindow::new(target.width, target.height);
    loss_and_grad(&win, target, rendered, weights, lambda).map(|(l, _)| l)
}

/// Loss value and its gradient with respect to the rendered image.
pub(crate) fn loss_and_grad(
    win: &GaussianWindow,
    target: &ImageBuffer,
    rendered: &ImageBuffer,
    weights: &MaskMap,
    lambda: LossWeights,
) -> Result<(f64, Vec<f64>)> {
    let total = check(target, rendered, weights)?;
    let n = weights.data.len();
    let mut grad = vec![0.0; n * 3];
    let mut l1 = 0.0;
    let l1_scale = lambda.l1 / (3.0 * total);
    for p in 0..n {
        let w = weights.data[p];
        if w == 0.0 {
            continue;
        }
        for ch in 0..3 {
            let diff = rendered.data[p * 3 + ch] - target.data[p * 3 + ch];
            l1 += w * diff.abs();
            // subgradient 0 at the kink
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad[p * 3 + ch] = l1_scale * w * sign;
        }
    }
    let mut loss = lambda.l1 * l1 / (3.0 * total);
    if lambda.dssim > 0.0 {
        let coeff: Vec<f64> = weights.data.iter().map(|w| w / total).collect();
        let (ssim_w, ssim_grad) = super::ssim::weighted_ssim_grad(win, rendered, target, &coeff);
        loss += lambda.dssim * (1.0 - ssim_w) / 2.0;
        for (g, s) in grad.iter_mut().zip(ssim_grad) {
            *g -= 0.5 * lambda.dssim * s;
        }
    }
    Ok((loss, grad))
}
