//! The iterative inpainting loop: uncertainty-guided masked retraining
//! alternating with concept-conditioned inpainting of the input views.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inpaint::{inpaint_checked, ConceptHandle, InpaintBackend, InpaintRequest};
use crate::metrics::{masked_bbox_crop, psnr, ssim};
use crate::par::{map_range, map_range_limited, Exec};
use crate::render::render_with;
use crate::scene::{init_cloud, GaussianCloud, ImageBuffer, InitConfig, MaskMap, SceneDataset};
use crate::train::{holdout_split, train_views, TrainConfig, TrainingView};
use crate::visibility::{fuse_mask, uncertainty_maps, UncertaintyConfig, UncertaintyMap};

/// Fewest views the loop accepts.
pub const MIN_VIEWS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Number of cycles `K`.
    pub cycles: usize,
    /// Growth of the mask weight `θ` per cycle; `θ_1 = 0`.
    pub theta_increment: f64,
    /// Per-cycle reduction `r` of the noise strength.
    pub noise_reduction: f64,
    /// Iterations of the initial unweighted fit.
    pub initial_iterations: usize,
    /// Iterations of each masked retrain.
    pub cycle_iterations: usize,
    /// Denoising steps per inpainting call.
    pub denoise_steps: usize,
    pub uncertainty: UncertaintyConfig,
    /// Template for every training stage; `iterations` and `seed` are
    /// overridden per stage.
    pub train: TrainConfig,
    /// Learning-rate multiplier for the masked retrains, which continue from
    /// an already fitted cloud.
    pub refine_lr_scale: f64,
    /// Densify and prune during the masked retrains.
    pub refine_densify: bool,
    pub init: InitConfig,
    /// Leave the raw views out of the retraining set once inpainted views
    /// exist.
    pub drop_raw_anchors: bool,
    /// Stop when the training PSNR changes by less than
    /// `convergence_db` between cycles.
    pub early_stop: bool,
    pub convergence_db: f64,
    /// Hold out two views in five for evaluation.
    pub holdout: bool,
    /// Most inpainting requests in flight at once.
    pub inpaint_concurrency: usize,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            cycles: 3,
            theta_increment: 0.1,
            noise_reduction: 0.2,
            initial_iterations: 10_000,
            cycle_iterations: 10_000,
            denoise_steps: 50,
            uncertainty: UncertaintyConfig::default(),
            train: TrainConfig::default(),
            refine_lr_scale: 0.1,
            refine_densify: false,
            init: InitConfig::default(),
            drop_raw_anchors: false,
            early_stop: true,
            convergence_db: 0.1,
            holdout: false,
            inpaint_concurrency: 2,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cycles == 0 {
            return Err(Error::InvalidConfig("at least one cycle is required".into()));
        }
        if !(self.noise_reduction > 0.0 && self.noise_reduction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "noise reduction must be in (0, 1), got {}",
                self.noise_reduction
            )));
        }
        if !(self.theta_increment >= 0.0) || theta_schedule(self.cycles, self) > 1.0 {
            return Err(Error::InvalidConfig(format!(
                "theta reaches {} by cycle {}; it must stay in [0, 1]",
                theta_schedule(self.cycles, self),
                self.cycles
            )));
        }
        if self.initial_iterations == 0 || self.cycle_iterations == 0 || self.denoise_steps == 0 {
            return Err(Error::InvalidConfig("iteration and step counts must be positive".into()));
        }
        if !(self.refine_lr_scale > 0.0) {
            return Err(Error::InvalidConfig("refine learning-rate scale must be positive".into()));
        }
        if self.inpaint_concurrency == 0 {
            return Err(Error::InvalidConfig("inpaint concurrency must be positive".into()));
        }
        self.uncertainty.validate()?;
        self.train.validate()
    }
}

/// `θ_k = (k - 1) · increment`.
pub fn theta_schedule(k: usize, config: &PipelineConfig) -> f64 {
    k.saturating_sub(1) as f64 * config.theta_increment
}

/// `max(r, 1 - r (k - 1))`.
pub fn strength_schedule(k: usize, config: &PipelineConfig) -> f64 {
    let r = config.noise_reduction;
    (1.0 - r * k.saturating_sub(1) as f64).max(r)
}

/// Clean references used to score masked regions.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub clean: Vec<ImageBuffer>,
    /// Regions to score, one per view; empty masks are skipped.
    pub regions: Vec<MaskMap>,
}

impl GroundTruth {
    /// Mean PSNR over the bounding boxes of the non-empty regions of
    /// `views`; `None` when every region is empty.
    pub fn masked_psnr(&self, cloud: &GaussianCloud, dataset: &SceneDataset, views: &[usize], background: [f64; 3], exec: Exec) -> Result<Option<f64>> {
        let mut scores = Vec::new();
        for &i in views {
            let region = &self.regions[i];
            if region.is_all_zero() {
                continue;
            }
            let render = render_with(cloud, &dataset.views[i].camera, background, exec).color;
            let a = masked_bbox_crop(&render, region)?;
            let b = masked_bbox_crop(&self.clean[i], region)?;
            scores.push(psnr(&a, &b)?);
        }
        Ok((!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64))
    }

    fn check(&self, n: usize) -> Result<()> {
        for len in [self.clean.len(), self.regions.len()] {
            if len != n {
                return Err(Error::CountMismatch { expected: n, found: len });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CycleSummary {
    pub k: usize,
    pub theta: f64,
    pub strength: f64,
    pub train_psnr: f64,
    pub heldout_psnr: Option<f64>,
    pub masked_psnr: Option<f64>,
    pub splats: usize,
}

/// Maps used by a masked retrain, indexed like the training views.
#[derive(Debug, Clone)]
pub struct MaskedRetrain {
    pub k: usize,
    pub theta: f64,
    pub uncertainty: Vec<UncertaintyMap>,
    pub fused: Vec<MaskMap>,
}

/// Everything produced by one cycle.
#[derive(Debug, Clone)]
pub struct CycleRecord {
    pub summary: CycleSummary,
    /// Cloud after the masked retrain.
    pub cloud: GaussianCloud,
    /// Indexed like the dataset; held-out views get `None`.
    pub uncertainty: Vec<Option<UncertaintyMap>>,
    pub fused: Vec<Option<MaskMap>>,
    pub inpainted: Vec<Option<ImageBuffer>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    /// Metrics of the initial unweighted fit, recorded as cycle 0.
    pub initial: CycleSummary,
    pub cycles: Vec<CycleSummary>,
    pub train_views: Vec<usize>,
    pub heldout_views: Vec<usize>,
    pub stopped_early: bool,
}

impl PipelineReport {
    pub fn thetas(&self) -> Vec<f64> {
        self.cycles.iter().map(|c| c.theta).collect()
    }

    pub fn to_csv(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map(|x| format!("{x:.4}")).unwrap_or_default()
        }
        let mut out = String::from("cycle,theta,strength,train_psnr,heldout_psnr,masked_psnr,splats\n");
        for c in std::iter::once(&self.initial).chain(&self.cycles) {
            let _ = writeln!(
                out,
                "{},{},{},{:.4},{},{},{}",
                c.k,
                c.theta,
                c.strength,
                c.train_psnr,
                opt(c.heldout_psnr),
                opt(c.masked_psnr),
                c.splats
            );
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub cloud: GaussianCloud,
    pub report: PipelineReport,
    pub initial_cloud: GaussianCloud,
    pub records: Vec<CycleRecord>,
}

/// State carried between cycles.
#[derive(Debug, Clone)]
pub struct PipelineState<'a> {
    dataset: &'a SceneDataset,
    config: &'a PipelineConfig,
    truth: Option<&'a GroundTruth>,
    train_idx: Vec<usize>,
    heldout_idx: Vec<usize>,
    /// Completed cycles.
    pub k: usize,
    pub cloud: GaussianCloud,
    /// Latest inpainted views, indexed like `train_idx`.
    pub inpainted: Option<Vec<ImageBuffer>>,
    pub history: Vec<CycleSummary>,
}

impl<'a> PipelineState<'a> {
    /// Validates the inputs and fits the initial cloud on the raw views with
    /// unit weights.
    pub fn initial_fit(dataset: &'a SceneDataset, config: &'a PipelineConfig, truth: Option<&'a GroundTruth>) -> Result<Self> {
        config.validate()?;
        dataset.validate()?;
        if dataset.views.len() < MIN_VIEWS {
            return Err(Error::TooFewViews {
                found: dataset.views.len(),
                needed: MIN_VIEWS,
            });
        }
        if let Some(t) = truth {
            t.check(dataset.views.len())?;
        }
        let (train_idx, heldout_idx) = if config.holdout {
            holdout_split(dataset.views.len())
        } else {
            ((0..dataset.views.len()).collect(), Vec::new())
        };
        if train_idx.len() < MIN_VIEWS {
            return Err(Error::TooFewViews {
                found: train_idx.len(),
                needed: MIN_VIEWS,
            });
        }
        let cloud = init_cloud(&dataset.sfm_points, &config.init)?;
        let views: Vec<TrainingView> = train_idx
            .iter()
            .map(|&i| {
                let v = &dataset.views[i];
                TrainingView {
                    camera: v.camera.clone(),
                    image: v.image.clone(),
                    weights: MaskMap::filled(v.image.width, v.image.height, 1.0),
                }
            })
            .collect();
        let result = train_views(cloud, &views, &stage_config(config, 0, config.initial_iterations))?;
        let mut state = PipelineState {
            dataset,
            config,
            truth,
            train_idx,
            heldout_idx,
            k: 0,
            cloud: result.cloud,
            inpainted: None,
            history: Vec::new(),
        };
        let initial = state.summarise(0, 0.0, 1.0)?;
        log::info!("initial fit: train {:.2} dB, {} splats", initial.train_psnr, initial.splats);
        state.history.push(initial);
        Ok(state)
    }

    pub fn train_views(&self) -> &[usize] {
        &self.train_idx
    }

    pub fn heldout_views(&self) -> &[usize] {
        &self.heldout_idx
    }

    /// Runs cycle `k + 1`: masked retrain, then inpainting.
    pub fn run_cycle(&mut self, backend: &dyn InpaintBackend) -> Result<CycleRecord> {
        let gi = self.masked_retrain()?;
        let k = gi.k;
        let strength = strength_schedule(k, self.config);
        let train_ds = self.dataset.subset(&self.train_idx);
        let inpainted = self
            .inpaint_all(backend, &train_ds, &gi.fused, strength, k)
            .map_err(|e| Error::InpaintCycle {
                cycle: k,
                source: Box::new(e),
            })?;

        let summary = self.summarise(k, gi.theta, strength)?;
        log::info!(
            "cycle {k}: theta {}, strength {strength}, train {:.2} dB, masked {:?}",
            gi.theta,
            summary.train_psnr,
            summary.masked_psnr
        );
        self.k = k;
        self.history.push(summary.clone());
        let n = self.dataset.views.len();
        let mut record = CycleRecord {
            summary,
            cloud: self.cloud.clone(),
            uncertainty: vec![None; n],
            fused: vec![None; n],
            inpainted: vec![None; n],
        };
        for (j, &i) in self.train_idx.iter().enumerate() {
            record.uncertainty[i] = Some(gi.uncertainty[j].clone());
            record.fused[i] = Some(gi.fused[j].clone());
            record.inpainted[i] = Some(inpainted[j].clone());
        }
        self.inpainted = Some(inpainted);
        Ok(record)
    }

    /// The geometric half of cycle `k + 1`: uncertainty maps from the
    /// current cloud, fusion with the view masks at `θ_{k+1}`, and a
    /// retrain on raw views weighted by `1 - M′` plus the latest inpainted
    /// views at full weight. Does not advance `k`.
    pub fn masked_retrain(&mut self) -> Result<MaskedRetrain> {
        let k = self.k + 1;
        let config = self.config;
        let theta = theta_schedule(k, config);
        let train_ds = self.dataset.subset(&self.train_idx);

        let uncertainty = uncertainty_maps(&self.cloud, &train_ds, &config.uncertainty, config.exec)?;
        let fused = uncertainty
            .iter()
            .zip(&train_ds.views)
            .map(|(u, v)| fuse_mask(u, &v.mask, theta))
            .collect::<Result<Vec<_>>>()?;

        let mut views = Vec::new();
        let keep_raw = !(config.drop_raw_anchors && self.inpainted.is_some());
        if keep_raw {
            for (v, m) in train_ds.views.iter().zip(&fused) {
                let weights = m.complement();
                if weights.data.iter().any(|&w| w > 0.0) {
                    views.push(TrainingView {
                        camera: v.camera.clone(),
                        image: v.image.clone(),
                        weights,
                    });
                }
            }
        }
        if let Some(inpainted) = &self.inpainted {
            for (v, img) in train_ds.views.iter().zip(inpainted) {
                views.push(TrainingView {
                    camera: v.camera.clone(),
                    image: img.clone(),
                    weights: MaskMap::filled(img.width, img.height, 1.0),
                });
            }
        }
        if views.is_empty() {
            return Err(Error::ZeroWeights);
        }
        let cloud = std::mem::replace(&mut self.cloud, GaussianCloud::empty(0));
        self.cloud = train_views(cloud, &views, &stage_config(config, k, config.cycle_iterations))?.cloud;
        Ok(MaskedRetrain {
            k,
            theta,
            uncertainty,
            fused,
        })
    }

    fn inpaint_all(&self, backend: &dyn InpaintBackend, train_ds: &SceneDataset, fused: &[MaskMap], strength: f64, k: usize) -> Result<Vec<ImageBuffer>> {
        let raw: Vec<ImageBuffer> = train_ds.views.iter().map(|v| v.image.clone()).collect();
        let concept: ConceptHandle = backend.learn_concept(&raw, fused)?;
        let config = self.config;
        map_range_limited(config.exec, raw.len(), config.inpaint_concurrency, |j| {
            let view = self.train_idx[j];
            inpaint_checked(
                backend,
                &InpaintRequest {
                    view,
                    image: &raw[j],
                    mask: &fused[j],
                    concept: &concept,
                    strength,
                    steps: config.denoise_steps,
                    seed: request_seed(config.seed, k, view),
                },
            )
        })
        .into_iter()
        .collect()
    }

    fn mean_psnr(&self, views: &[usize]) -> Result<Option<f64>> {
        if views.is_empty() {
            return Ok(None);
        }
        let bg = self.config.train.background;
        let scores = map_range(self.config.exec, views.len(), |j| {
            let v = &self.dataset.views[views[j]];
            psnr(&render_with(&self.cloud, &v.camera, bg, Exec::Sequential).color, &v.image)
        })
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
        Ok(Some(scores.iter().sum::<f64>() / scores.len() as f64))
    }

    fn summarise(&self, k: usize, theta: f64, strength: f64) -> Result<CycleSummary> {
        let train_psnr = self.mean_psnr(&self.train_idx)?.unwrap_or(0.0);
        let heldout_psnr = self.mean_psnr(&self.heldout_idx)?;
        let masked_psnr = self.masked_psnr()?;
        Ok(CycleSummary {
            k,
            theta,
            strength,
            train_psnr,
            heldout_psnr,
            masked_psnr,
            splats: self.cloud.len(),
        })
    }

    /// Mean masked-region PSNR of the current cloud over the held-out views
    /// (all training views when nothing is held out).
    pub fn masked_psnr(&self) -> Result<Option<f64>> {
        match self.truth {
            Some(t) => {
                let views = if self.heldout_idx.is_empty() { &self.train_idx } else { &self.heldout_idx };
                t.masked_psnr(&self.cloud, self.dataset, views, self.config.train.background, self.config.exec)
            }
            None => Ok(None),
        }
    }

    /// True once the last two cycles moved the training PSNR by less than
    /// the convergence threshold.
    pub fn converged(&self) -> bool {
        match self.history.as_slice() {
            [.., a, b] if b.k >= 2 => (b.train_psnr - a.train_psnr).abs() < self.config.convergence_db,
            _ => false,
        }
    }
}

fn stage_config(config: &PipelineConfig, stage: usize, iterations: usize) -> TrainConfig {
    let mut train = TrainConfig {
        iterations,
        seed: config.seed.wrapping_add(stage as u64),
        ..config.train.clone()
    };
    if stage > 0 {
        let k = config.refine_lr_scale;
        let lr = &mut train.lr;
        for rate in [&mut lr.mean, &mut lr.scale, &mut lr.rotation, &mut lr.opacity, &mut lr.sh_dc, &mut lr.sh_rest] {
            *rate *= k;
        }
        if !config.refine_densify {
            train.densify_from = usize::MAX;
        }
    }
    train
}

fn request_seed(seed: u64, k: usize, view: usize) -> u64 {
    seed ^ ((k as u64) << 32) ^ view as u64
}

/// Runs the full loop and returns the final cloud and the per-cycle report.
pub fn vista_run(dataset: &SceneDataset, config: &PipelineConfig, backend: &dyn InpaintBackend, truth: Option<&GroundTruth>) -> Result<PipelineOutput> {
    let mut state = PipelineState::initial_fit(dataset, config, truth)?;
    let initial_cloud = state.cloud.clone();
    let mut records = Vec::new();
    let mut stopped_early = false;
    for _ in 0..config.cycles {
        records.push(state.run_cycle(backend)?);
        if config.early_stop && state.k < config.cycles && state.converged() {
            log::info!("training PSNR converged after cycle {}", state.k);
            stopped_early = true;
            break;
        }
    }
    let report = PipelineReport {
        initial: state.history[0].clone(),
        cycles: state.history[1..].to_vec(),
        train_views: state.train_idx.clone(),
        heldout_views: state.heldout_idx.clone(),
        stopped_early,
    };
    Ok(PipelineOutput {
        cloud: state.cloud,
        report,
        initial_cloud,
        records,
    })
}

/// One row of the sparsity study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SparsityRow {
    pub interval: usize,
    pub views: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SparsityTable {
    pub rows: Vec<SparsityRow>,
}

impl SparsityTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("interval,views,psnr,ssim\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{:.4},{:.6}", r.interval, r.views, r.psnr, r.ssim);
        }
        out
    }

    pub fn row(&self, interval: usize) -> Option<&SparsityRow> {
        self.rows.iter().find(|r| r.interval == interval)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Every `interval`-th view, starting at view 0.
pub fn subsample_views(n: usize, interval: usize) -> Vec<usize> {
    (0..n).step_by(interval.max(1)).collect()
}

/// Fits a reference on all views, then for each interval keeps every
/// interval-th view, reruns the loop and scores its renders against the
/// reference renders at every camera of the dataset.
pub fn viewpoint_sparsity_study(dataset: &SceneDataset, intervals: &[usize], config: &PipelineConfig, backend: &dyn InpaintBackend) -> Result<SparsityTable> {
    let n = dataset.views.len();
    for &interval in intervals {
        let kept = if interval == 0 { 0 } else { subsample_views(n, interval).len() };
        if kept < MIN_VIEWS {
            return Err(Error::TooFewViews {
                found: kept,
                needed: MIN_VIEWS,
            });
        }
    }
    let config = PipelineConfig {
        holdout: false,
        ..config.clone()
    };
    let bg = config.train.background;
    let render_all = |cloud: &GaussianCloud| -> Vec<ImageBuffer> {
        map_range(config.exec, n, |i| render_with(cloud, &dataset.views[i].camera, bg, Exec::Sequential).color)
    };
    let reference = vista_run(dataset, &config, backend, None)?;
    let reference_renders = render_all(&reference.cloud);
    let mut rows = Vec::with_capacity(intervals.len());
    for &interval in intervals {
        let kept = subsample_views(n, interval);
        let renders = if interval == 1 {
            reference_renders.clone()
        } else {
            let out = vista_run(&dataset.subset(&kept), &config, backend, None)?;
            render_all(&out.cloud)
        };
        let mut p = 0.0;
        let mut s = 0.0;
        for (a, b) in renders.iter().zip(&reference_renders) {
            p += psnr(a, b)?;
            s += ssim(a, b)?;
        }
        let row = SparsityRow {
            interval,
            views: kept.len(),
            psnr: p / n as f64,
            ssim: s / n as f64,
        };
        log::info!("sparsity interval {interval}: {row:?}");
        rows.push(row);
    }
    Ok(SparsityTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inpaint::EchoBackend;
    use proptest::prelude::*;

    #[test]
    fn theta_values() {
        let c = PipelineConfig::default();
        assert_eq!(theta_schedule(1, &c), 0.0);
        assert_eq!(theta_schedule(2, &c), 0.1);
        assert_eq!(theta_schedule(3, &c), 0.2);
        let c = PipelineConfig {
            theta_increment: 0.3,
            ..Default::default()
        };
        assert!((theta_schedule(3, &c) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn strength_values() {
        let c = PipelineConfig::default();
        assert_eq!(strength_schedule(1, &c), 1.0);
        assert!((strength_schedule(2, &c) - 0.8).abs() < 1e-15);
        assert!((strength_schedule(3, &c) - 0.6).abs() < 1e-15);
        let c = PipelineConfig {
            noise_reduction: 0.5,
            ..Default::default()
        };
        assert_eq!(strength_schedule(4, &c), 0.5);
    }

    #[test]
    fn invalid_configs_rejected() {
        for c in [
            PipelineConfig {
                cycles: 0,
                ..Default::default()
            },
            PipelineConfig {
                noise_reduction: 1.0,
                ..Default::default()
            },
            PipelineConfig {
                noise_reduction: 0.0,
                ..Default::default()
            },
            PipelineConfig {
                cycles: 12,
                ..Default::default()
            },
        ] {
            assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))), "{c:?}");
        }
    }

    #[test]
    fn too_few_views_rejected() {
        let ds = SceneDataset {
            name: "tiny".into(),
            views: Vec::new(),
            sfm_points: Vec::new(),
        };
        let err = vista_run(&ds, &PipelineConfig::default(), &EchoBackend, None).unwrap_err();
        assert!(matches!(err, Error::TooFewViews { .. }));
    }

    #[test]
    fn subsampling() {
        assert_eq!(subsample_views(10, 1), (0..10).collect::<Vec<_>>());
        assert_eq!(subsample_views(34, 7), vec![0, 7, 14, 21, 28]);
        assert_eq!(subsample_views(34, 2).len(), 17);
    }

    proptest! {
        #[test]
        fn schedules_are_monotone(inc in 0.0f64..0.3, r in 0.01f64..0.99, k in 1usize..12) {
            let c = PipelineConfig { theta_increment: inc, noise_reduction: r, ..Default::default() };
            let t1 = theta_schedule(k, &c);
            let t2 = theta_schedule(k + 1, &c);
            prop_assert!((t2 - t1 - inc).abs() < 1e-12);
            let s1 = strength_schedule(k, &c);
            let s2 = strength_schedule(k + 1, &c);
            prop_assert!(s2 <= s1);
            prop_assert!((r..=1.0).contains(&s1));
        }
    }
}
