//! Adaptive density control: clone, split and prune.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::backward::GradientSet;
use crate::scene::{GaussianCloud, Splat};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensifyConfig {
    /// Mean screen-space gradient (NDC units) above which a splat is densified.
    pub grad_threshold: f64,
    /// Splats whose largest scale exceeds this fraction of the scene extent
    /// are split; smaller ones are cloned.
    pub percent_dense: f64,
    pub split_factor: f64,
    pub prune_opacity: f64,
    pub max_splats: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        DensifyConfig {
            grad_threshold: 0.0002,
            percent_dense: 0.01,
            split_factor: 1.6,
            prune_opacity: 0.005,
            max_splats: 200_000,
        }
    }
}

/// Running sum of screen-space gradient norms over the views a splat was
/// visible in.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DensifyStats {
    pub grad_sum: Vec<f64>,
    pub count: Vec<u32>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        DensifyStats {
            grad_sum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    pub fn accumulate(&mut self, grads: &GradientSet) {
        for i in 0..grads.len() {
            if grads.visible[i] {
                self.grad_sum[i] += grads.screen[i];
                self.count[i] += 1;
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.grad_sum[i] / self.count[i] as f64
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Uniform sample inside the splat's one-sigma ellipsoid.
fn sample_in_ellipsoid(splat: &Splat, rng: &mut impl Rng) -> [f64; 3] {
    let dir: Vector3<f64> = Vector3::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    );
    let n = dir.norm();
    let dir = if n > 0.0 { dir / n } else { Vector3::x() };
    let radius = rng.random::<f64>().cbrt();
    let s = splat.scale();
    let local = Vector3::new(dir.x * s[0], dir.y * s[1], dir.z * s[2]) * radius;
    let p = splat.mean_vec() + splat.rotation_matrix() * local;
    [p.x, p.y, p.z]
}

/// Clones small high-gradient splats, splits large ones into two children,
/// then prunes near-transparent splats. Optimiser rows follow the splats;
/// new splats start with zero moments. Statistics are reset.
pub fn densify_prune(
    cloud: &mut GaussianCloud,
    stats: &mut DensifyStats,
    state: &mut AdamState,
    config: &DensifyConfig,
    scene_extent: f64,
    rng: &mut impl Rng,
) -> DensifyReport {
    let n = cloud.len();
    let mut report = DensifyReport::default();
    let mut splats = Vec::with_capacity(n);
    let mut sources = Vec::with_capacity(n);
    let mut added = Vec::new();
    let mut budget = config.max_splats.saturating_sub(n);
    let size_limit = config.percent_dense * scene_extent;
    let shrink = config.split_factor.ln();

    for (i, splat) in cloud.splats.iter().enumerate() {
        let hot = stats.mean(i) >= config.grad_threshold;
        let largest = splat.scale().into_iter().fold(f64::MIN, f64::max);
        if hot && largest > size_limit && budget >= 1 {
            for _ in 0..2 {
                let mut child = splat.clone();
                child.mean = sample_in_ellipsoid(splat, rng);
                child.log_scale = splat.log_scale.map(|s| s - shrink);
                added.push(child);
            }
            budget -= 1;
            report.split += 1;
            continue;
        }
        if hot && largest <= size_limit && budget >= 1 {
            added.push(splat.clone());
            budget -= 1;
            report.cloned += 1;
        }
        splats.push(splat.clone());
        sources.push(Some(i));
    }
    for s in added {
        splats.push(s);
        sources.push(None);
    }

    let before = splats.len();
    let mut kept = Vec::with_capacity(before);
    let mut kept_src = Vec::with_capacity(before);
    for (s, src) in splats.into_iter().zip(sources) {
        if s.opacity() >= config.prune_opacity {
            kept.push(s);
            kept_src.push(src);
        }
    }
    report.pruned = before - kept.len();
    cloud.splats = kept;
    state.remap(&kept_src);
    *stats = DensifyStats::new(cloud.len());
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::cloud::logit;
    use crate::scene::ParamLayout;
    use rand::SeedableRng;

    fn splat(log_scale: f64, opacity: f64) -> Splat {
        Splat {
            mean: [0.0; 3],
            log_scale: [log_scale, log_scale - 0.5, log_scale - 1.0],
            rotation: [0.9, 0.1, 0.3, -0.2].map(|v: f64| v / (0.9f64 * 0.9 + 0.01 + 0.09 + 0.04).sqrt()),
            opacity_logit: logit(opacity),
            sh: vec![[0.1, 0.2, 0.3]],
        }
    }

    fn setup(splats: Vec<Splat>) -> (GaussianCloud, DensifyStats, AdamState) {
        let n = splats.len();
        let cloud = GaussianCloud { sh_degree: 0, splats };
        (cloud, DensifyStats::new(n), AdamState::new(ParamLayout::new(0), n))
    }

    #[test]
    fn cold_cloud_is_unchanged() {
        let (mut cloud, mut stats, mut state) = setup(vec![splat(-2.0, 0.5), splat(-5.0, 0.3)]);
        let before = cloud.clone();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let r = densify_prune(&mut cloud, &mut stats, &mut state, &DensifyConfig::default(), 1.0, &mut rng);
        assert_eq!(cloud, before);
        assert_eq!(r, DensifyReport::default());
    }

    #[test]
    fn transparent_splat_is_pruned() {
        let (mut cloud, mut stats, mut state) = setup(vec![splat(-2.0, 0.5), splat(-2.0, 0.001)]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let r = densify_prune(&mut cloud, &mut stats, &mut state, &DensifyConfig::default(), 1.0, &mut rng);
        assert_eq!(cloud.len(), 1);
        assert_eq!(r.pruned, 1);
        assert_eq!(state.rows(), 1);
    }

    #[test]
    fn small_hot_splat_is_cloned() {
        let (mut cloud, mut stats, mut state) = setup(vec![splat(-6.0, 0.5)]);
        stats.grad_sum[0] = 1.0;
        stats.count[0] = 1;
        state.m.iter_mut().for_each(|m| *m = 2.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let r = densify_prune(&mut cloud, &mut stats, &mut state, &DensifyConfig::default(), 1.0, &mut rng);
        assert_eq!(r.cloned, 1);
        assert_eq!(cloud.splats[0], cloud.splats[1]);
        let s = state.stride;
        assert!(state.m[..s].iter().all(|&m| m == 2.0));
        assert!(state.m[s..].iter().all(|&m| m == 0.0));
    }

    #[test]
    fn large_hot_splat_is_split() {
        let parent = splat(-1.0, 0.5);
        let (mut cloud, mut stats, mut state) = setup(vec![parent.clone()]);
        stats.grad_sum[0] = 1.0;
        stats.count[0] = 1;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let r = densify_prune(&mut cloud, &mut stats, &mut state, &DensifyConfig::default(), 1.0, &mut rng);
        assert_eq!(r.split, 1);
        assert_eq!(cloud.len(), 2);
        let inv = parent.rotation_matrix().transpose();
        let s = parent.scale();
        for child in &cloud.splats {
            for k in 0..3 {
                assert!((child.log_scale[k] - (parent.log_scale[k] - 1.6f64.ln())).abs() < 1e-15);
            }
            let local = inv * (child.mean_vec() - parent.mean_vec());
            let r2: f64 = (0..3).map(|k| (local[k] / s[k]).powi(2)).sum();
            assert!(r2 <= 1.0 + 1e-12);
        }
        // same seed, same children
        let (mut again, mut st2, mut sa2) = setup(vec![parent]);
        st2.grad_sum[0] = 1.0;
        st2.count[0] = 1;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        densify_prune(&mut again, &mut st2, &mut sa2, &DensifyConfig::default(), 1.0, &mut rng);
        assert_eq!(again, cloud);
    }

    #[test]
    fn cap_limits_growth() {
        let (mut cloud, mut stats, mut state) = setup(vec![splat(-6.0, 0.5); 4]);
        stats.grad_sum.iter_mut().for_each(|g| *g = 1.0);
        stats.count.iter_mut().for_each(|c| *c = 1);
        let config = DensifyConfig { max_splats: 6, ..Default::default() };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        densify_prune(&mut cloud, &mut stats, &mut state, &config, 1.0, &mut rng);
        assert_eq!(cloud.len(), 6);
    }
}
