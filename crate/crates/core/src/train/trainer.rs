//! The optimisation loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState, LearningRates};
use super::backward::backward_with;
use super::densify::{densify_prune, DensifyConfig, DensifyStats};
use super::loss::LossWeights;
use super::ssim::GaussianWindow;
use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::par::Exec;
use crate::scene::{CameraView, GaussianCloud, ImageBuffer, MaskMap, SceneDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lambda: LossWeights,
    /// The mean rate is multiplied by the scene extent.
    pub lr: LearningRates,
    /// Mean rate at the last iteration, as a fraction of the initial rate.
    pub mean_lr_final_ratio: f64,
    pub densify: DensifyConfig,
    pub densify_from: usize,
    /// Defaults to half of `iterations` when `None`.
    pub densify_until: Option<usize>,
    pub densify_interval: usize,
    pub background: [f64; 3],
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 10_000,
            lambda: LossWeights::default(),
            lr: LearningRates::default(),
            mean_lr_final_ratio: 0.01,
            densify: DensifyConfig::default(),
            densify_from: 500,
            densify_until: None,
            densify_interval: 100,
            background: [0.0; 3],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be positive".into()));
        }
        self.lambda.validate()?;
        let d = &self.densify;
        if !(d.grad_threshold > 0.0 && d.prune_opacity > 0.0 && d.percent_dense > 0.0 && d.split_factor > 1.0) {
            return Err(Error::InvalidConfig("densification thresholds must be positive".into()));
        }
        if self.densify_interval == 0 {
            return Err(Error::InvalidConfig("densify interval must be positive".into()));
        }
        if !(self.mean_lr_final_ratio > 0.0) {
            return Err(Error::InvalidConfig("mean learning-rate ratio must be positive".into()));
        }
        Ok(())
    }

    fn densify_until(&self) -> usize {
        self.densify_until.unwrap_or(self.iterations / 2)
    }
}

/// One supervised view: camera, target image and per-pixel loss weights.
#[derive(Debug, Clone)]
pub struct TrainingView {
    pub camera: CameraView,
    pub image: ImageBuffer,
    pub weights: MaskMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub view: usize,
    pub loss: f64,
    /// PSNR of the rendered training view against its target.
    pub psnr: f64,
    pub splats: usize,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub cloud: GaussianCloud,
    pub log: Vec<LossRecord>,
}

/// Fits `cloud` to the dataset views using one weight map per view.
pub fn train(cloud: GaussianCloud, dataset: &SceneDataset, weights: &[MaskMap], config: &TrainConfig) -> Result<TrainResult> {
    if weights.len() != dataset.views.len() {
        return Err(Error::CountMismatch {
            expected: dataset.views.len(),
            found: weights.len(),
        });
    }
    let views: Vec<TrainingView> = dataset
        .views
        .iter()
        .zip(weights)
        .map(|(v, w)| TrainingView {
            camera: v.camera.clone(),
            image: v.image.clone(),
            weights: w.clone(),
        })
        .collect();
    train_views(cloud, &views, config)
}

/// Exponential interpolation of the mean learning rate.
fn mean_rate(config: &TrainConfig, extent: f64, iteration: usize) -> f64 {
    let t = if config.iterations > 1 {
        iteration as f64 / (config.iterations - 1) as f64
    } else {
        0.0
    };
    config.lr.mean * extent * config.mean_lr_final_ratio.powf(t)
}

pub fn train_views(mut cloud: GaussianCloud, views: &[TrainingView], config: &TrainConfig) -> Result<TrainResult> {
    config.validate()?;
    if views.is_empty() {
        return Err(Error::TooFewViews { found: 0, needed: 1 });
    }
    for v in views {
        v.camera.validate()?;
        let dims = (v.camera.width, v.camera.height);
        if v.image.dims() != dims {
            return Err(Error::dims("training image", dims, v.image.dims()));
        }
        if v.weights.dims() != dims {
            return Err(Error::dims("weight map", dims, v.weights.dims()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let extent = camera_extent(views.iter().map(|v| &v.camera));
    let mut state = AdamState::new(cloud.layout(), cloud.len());
    let mut stats = DensifyStats::new(cloud.len());
    let mut windows: Vec<(usize, usize, GaussianWindow)> = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    let mut log = Vec::with_capacity(config.iterations);
    let until = config.densify_until();

    for it in 0..config.iterations {
        if order.is_empty() {
            order = (0..views.len()).collect();
            order.shuffle(&mut rng);
        }
        let vi = order.pop().expect("refilled above");
        let view = &views[vi];
        // views with no weight at all carry no signal
        if view.weights.is_all_zero() {
            continue;
        }
        let dims = (view.camera.width, view.camera.height);
        let wi = match windows.iter().position(|(w, h, _)| (*w, *h) == dims) {
            Some(i) => i,
            None => {
                windows.push((dims.0, dims.1, GaussianWindow::new(dims.0, dims.1)));
                windows.len() - 1
            }
        };
        let out = backward_with(
            &cloud,
            &view.camera,
            &view.image,
            &view.weights,
            config.lambda,
            config.background,
            &windows[wi].2,
            Exec::default(),
        )?;
        stats.accumulate(&out.grads);
        let lrs = LearningRates {
            mean: mean_rate(config, extent, it),
            ..config.lr
        };
        adam_step(&mut cloud, &out.grads, &mut state, &lrs);
        log.push(LossRecord {
            iteration: it,
            view: vi,
            loss: out.loss,
            psnr: psnr(&out.render.color, &view.image)?,
            splats: cloud.len(),
        });

        let step = it + 1;
        if step >= config.densify_from && step <= until && step % config.densify_interval == 0 {
            let report = densify_prune(&mut cloud, &mut stats, &mut state, &config.densify, extent, &mut rng);
            log::debug!("iteration {step}: {report:?}, {} splats", cloud.len());
        }
    }
    Ok(TrainResult { cloud, log })
}

/// Radius of the camera rig, 1.1 times the largest centre distance from
/// the centroid.
pub fn camera_extent<'a>(cameras: impl Iterator<Item = &'a CameraView>) -> f64 {
    let centers: Vec<_> = cameras.map(|c| c.center()).collect();
    if centers.is_empty() {
        return 1.0;
    }
    let mean = centers.iter().fold(nalgebra::Vector3::zeros(), |a, c| a + c) / centers.len() as f64;
    let r = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
    if r > 0.0 {
        1.1 * r
    } else {
        1.0
    }
}

/// Interleaved train/held-out split with a 3:2 ratio: view indices with
/// `i % 5` in `{1, 3}` are held out.
pub fn holdout_split(n: usize) -> (Vec<usize>, Vec<usize>) {
    (0..n).partition(|i| !matches!(i % 5, 1 | 3))
}
