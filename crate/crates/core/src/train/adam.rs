//! Adam over the flat splat parameter rows.

use serde::{Deserialize, Serialize};

use super::backward::GradientSet;
use crate::scene::{GaussianCloud, ParamGroup, ParamLayout};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-15;

/// Step sizes per parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub mean: f64,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            mean: 1.6e-4,
            scale: 5e-3,
            rotation: 1e-3,
            opacity: 0.05,
            sh_dc: 2.5e-3,
            sh_rest: 2.5e-3 / 20.0,
        }
    }
}

impl LearningRates {
    pub fn rate(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Mean => self.mean,
            ParamGroup::Scale => self.scale,
            ParamGroup::Rotation => self.rotation,
            ParamGroup::Opacity => self.opacity,
            ParamGroup::ShDc => self.sh_dc,
            ParamGroup::ShRest => self.sh_rest,
        }
    }
}

/// First and second moments, one row per splat.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub stride: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(layout: ParamLayout, n: usize) -> Self {
        let stride = layout.stride();
        AdamState {
            stride,
            m: vec![0.0; n * stride],
            v: vec![0.0; n * stride],
            step: 0,
        }
    }

    pub fn rows(&self) -> usize {
        self.m.len() / self.stride
    }

    /// Rebuilds the moment rows: `Some(i)` copies old row `i`, `None`
    /// starts a fresh zero row.
    pub fn remap(&mut self, sources: &[Option<usize>]) {
        let s = self.stride;
        let mut m = vec![0.0; sources.len() * s];
        let mut v = vec![0.0; sources.len() * s];
        for (new, src) in sources.iter().enumerate() {
            if let Some(old) = *src {
                m[new * s..(new + 1) * s].copy_from_slice(&self.m[old * s..(old + 1) * s]);
                v[new * s..(new + 1) * s].copy_from_slice(&self.v[old * s..(old + 1) * s]);
            }
        }
        self.m = m;
        self.v = v;
    }
}

/// One bias-corrected Adam step. Moments decay for every row; parameters
/// of splats whose gradient row is entirely zero are left in place.
/// Quaternions are renormalised afterwards.
pub fn adam_step(cloud: &mut GaussianCloud, grads: &GradientSet, state: &mut AdamState, lrs: &LearningRates) {
    let layout = cloud.layout();
    let stride = layout.stride();
    debug_assert_eq!(state.stride, stride);
    debug_assert_eq!(state.rows(), cloud.len());
    state.step += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    let rates: Vec<f64> = (0..stride).map(|k| lrs.rate(layout.group_of(k))).collect();
    let mut row = vec![0.0; stride];
    for (i, splat) in cloud.splats.iter_mut().enumerate() {
        let g = grads.splat(i);
        let base = i * stride;
        let active = g.iter().any(|&x| x != 0.0);
        layout.write(splat, &mut row);
        for k in 0..stride {
            let m = &mut state.m[base + k];
            let v = &mut state.v[base + k];
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g[k];
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g[k] * g[k];
            if active {
                row[k] -= rates[k] * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
            }
        }
        if active {
            *splat = layout.read(&row);
            let q = &mut splat.rotation;
            let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                q.iter_mut().for_each(|x| *x /= n);
            } else {
                *q = [1.0, 0.0, 0.0, 0.0];
            }
        }
    }
}
