use vista_core::inpaint::{ConceptHandle, EchoBackend, InpaintBackend, InpaintRequest};
use vista_core::metrics::testgen::{generate, FixtureKind, TestgenConfig};
use vista_core::pipeline::{viewpoint_sparsity_study, vista_run, PipelineConfig};
use vista_core::scene::{ImageBuffer, MaskMap, SceneDataset};
use vista_core::train::{train, TrainConfig};
use vista_core::visibility::uncertainty_maps;
use vista_core::{Error, Exec, Result};

fn small_scene() -> SceneDataset {
    let config = TestgenConfig {
        width: 32,
        height: 32,
        ..Default::default()
    };
    generate(FixtureKind::Plane24, &config).unwrap().dataset
}

fn quick(cycles: usize) -> PipelineConfig {
    PipelineConfig {
        cycles,
        initial_iterations: 120,
        cycle_iterations: 40,
        early_stop: false,
        ..Default::default()
    }
}

struct Broken;

impl InpaintBackend for Broken {
    fn name(&self) -> &str {
        "broken"
    }

    fn learn_concept(&self, _images: &[ImageBuffer], _masks: &[MaskMap]) -> Result<ConceptHandle> {
        ConceptHandle::new("broken")
    }

    fn inpaint(&self, request: &InpaintRequest<'_>) -> Result<ImageBuffer> {
        Ok(ImageBuffer::new(request.image.width + 1, request.image.height))
    }
}

#[test]
fn report_follows_the_schedules() {
    let dataset = small_scene();
    let out = vista_run(&dataset, &quick(2), &EchoBackend, None).unwrap();
    assert_eq!(out.report.thetas(), vec![0.0, 0.1]);
    let strengths: Vec<f64> = out.report.cycles.iter().map(|c| c.strength).collect();
    assert_eq!(strengths[0], 1.0);
    assert!((strengths[1] - 0.8).abs() < 1e-15);
    assert_eq!(out.records.len(), 2);
    for r in &out.records {
        assert!(r.inpainted.iter().all(Option::is_some));
        assert!(r.fused.iter().flatten().all(|m| m.data.iter().all(|v| (0.0..=1.0).contains(v))));
    }
    let csv = out.report.to_csv();
    assert!(csv.starts_with("cycle,theta,strength,train_psnr,heldout_psnr,masked_psnr,splats\n"));
    assert_eq!(csv.lines().count(), 4);
    assert!(!out.report.stopped_early);
}

#[test]
fn runs_are_deterministic_across_execution_policies() {
    let dataset = small_scene();
    let parallel = vista_run(&dataset, &quick(1), &EchoBackend, None).unwrap();
    let again = vista_run(&dataset, &quick(1), &EchoBackend, None).unwrap();
    let sequential = vista_run(
        &dataset,
        &PipelineConfig {
            exec: Exec::Sequential,
            ..quick(1)
        },
        &EchoBackend,
        None,
    )
    .unwrap();
    assert_eq!(parallel.report.to_csv(), again.report.to_csv());
    assert_eq!(parallel.cloud, again.cloud);
    assert_eq!(parallel.cloud, sequential.cloud);
}

#[test]
fn single_cycle_with_empty_masks_is_an_uncertainty_weighted_retrain() {
    let dataset = small_scene();
    let config = quick(1);
    let out = vista_run(&dataset, &config, &EchoBackend, None).unwrap();

    let u = uncertainty_maps(&out.initial_cloud, &dataset, &config.uncertainty, config.exec).unwrap();
    let weights: Vec<MaskMap> = u
        .iter()
        .map(|u| MaskMap::from_raw(u.width, u.height, u.data.iter().map(|v| 1.0 - v).collect()).unwrap())
        .collect();
    let mut train_config = TrainConfig {
        iterations: config.cycle_iterations,
        seed: config.seed + 1,
        densify_from: usize::MAX,
        ..config.train.clone()
    };
    let lr = &mut train_config.lr;
    for rate in [&mut lr.mean, &mut lr.scale, &mut lr.rotation, &mut lr.opacity, &mut lr.sh_dc, &mut lr.sh_rest] {
        *rate *= config.refine_lr_scale;
    }
    let expected = train(out.initial_cloud.clone(), &dataset, &weights, &train_config).unwrap().cloud;
    assert_eq!(out.cloud, expected);
}

#[test]
fn backend_failures_name_the_cycle() {
    let dataset = small_scene();
    match vista_run(&dataset, &quick(2), &Broken, None) {
        Err(Error::InpaintCycle { cycle, source }) => {
            assert_eq!(cycle, 1);
            assert!(matches!(*source, Error::ContractViolation(_)));
        }
        other => panic!("expected an inpaint-cycle error, got {:?}", other.map(|o| o.report)),
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    let dataset = small_scene();
    assert!(matches!(vista_run(&dataset, &quick(0), &EchoBackend, None), Err(Error::InvalidConfig(_))));
    let two = dataset.subset(&[0, 1]);
    assert!(vista_run(&two, &quick(1), &EchoBackend, None).is_err());
    assert!(matches!(
        viewpoint_sparsity_study(&dataset, &[2, 12], &quick(1), &EchoBackend),
        Err(Error::TooFewViews { found: 2, .. })
    ));
}

#[test]
fn sparsity_table_has_one_row_per_interval() {
    let dataset = small_scene();
    let table = viewpoint_sparsity_study(&dataset, &[1, 4], &quick(1), &EchoBackend).unwrap();
    assert_eq!(table.rows.len(), 2);
    assert_eq!(table.row(1).unwrap().views, 24);
    assert_eq!(table.row(4).unwrap().views, 6);
    assert_eq!(table.row(1).unwrap().psnr, 99.0);
    assert!(table.row(4).unwrap().psnr < 99.0);
    assert!(table.to_csv().starts_with("interval,views,psnr,ssim\n"));
}
