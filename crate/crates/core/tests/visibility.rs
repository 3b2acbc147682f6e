use nalgebra::Vector3;
use proptest::prelude::*;
use vista_core::metrics::testgen::{generate, FixtureKind, TestgenConfig};
use vista_core::render::render;
use vista_core::scene::{init_cloud, CameraView, ImageBuffer, InitConfig, MaskMap, ScalarMap};
use vista_core::train::{train, TrainConfig};
use vista_core::visibility::{fuse_mask, normalize_uncertainty, point_uncertainty, uncertainty_maps, DepthView, UncertaintyConfig};
use vista_core::Exec;

fn ring(n: usize) -> Vec<CameraView> {
    (0..n)
        .map(|i| {
            let a = i as f64 * 0.3;
            CameraView::look_at(i as u32, Vector3::new(3.0 * a.cos(), 3.0 * a.sin(), 1.5), Vector3::zeros(), Vector3::z(), 40.0, 24, 24)
        })
        .collect()
}

fn flat_depths(cameras: &[CameraView], x: &Vector3<f64>) -> Vec<ScalarMap> {
    cameras
        .iter()
        .map(|cam| {
            let (_, z) = cam.project(x).unwrap();
            let mut d = ScalarMap::zeros(cam.width, cam.height);
            d.data.iter_mut().for_each(|v| *v = z);
            d
        })
        .collect()
}

fn one(v: f64) -> ScalarMap {
    ScalarMap {
        width: 1,
        height: 1,
        data: vec![v],
    }
}

fn fuse1(u: f64, m: f64, theta: f64) -> f64 {
    fuse_mask(&one(u), &MaskMap::from_raw(1, 1, vec![m]).unwrap(), theta).unwrap().data[0]
}

#[test]
fn black_and_white_views() {
    let cams = ring(2);
    let x = Vector3::new(0.05, 0.02, 0.0);
    let depths = flat_depths(&cams, &x);
    let images = [ImageBuffer::filled(24, 24, [0.0; 3]), ImageBuffer::filled(24, 24, [1.0; 3])];
    let views: Vec<DepthView<'_>> = (0..2)
        .map(|j| DepthView {
            camera: &cams[j],
            image: &images[j],
            depth: &depths[j],
        })
        .collect();
    assert_eq!(point_uncertainty(&x, &views, 0.05), 0.25);
}

#[test]
fn fuse_examples() {
    assert_eq!(fuse1(0.6, 0.0, 0.2), 0.6);
    assert_eq!(fuse1(0.6, 1.0, 0.2), 0.2);
    assert_eq!(fuse1(0.6, 1.0, 0.0), 0.0);
    assert_eq!(fuse1(0.0, 1.0, 0.3), 0.3);
    assert_eq!(fuse1(0.0, 0.0, 0.3), 0.0);
    assert!(fuse_mask(&one(0.1), &MaskMap::zeros(2, 1), 0.0).is_err());
    assert!(fuse_mask(&one(0.1), &MaskMap::zeros(1, 1), -0.1).is_err());
}

#[test]
fn identical_images_give_an_all_zero_map() {
    let fixture = generate(FixtureKind::Plane24, &TestgenConfig::default()).unwrap();
    let mut dataset = fixture.dataset.clone();
    for v in &mut dataset.views {
        v.image = ImageBuffer::filled(v.image.width, v.image.height, [0.4, 0.5, 0.6]);
    }
    let cloud = init_cloud(
        &dataset.sfm_points,
        &InitConfig {
            initial_opacity: 0.99,
            ..Default::default()
        },
    )
    .unwrap();
    let maps = uncertainty_maps(&cloud, &dataset.subset(&[0, 1, 2, 3, 4, 5]), &UncertaintyConfig::default(), Exec::default()).unwrap();
    for m in maps {
        assert!(m.data.iter().all(|&v| v == 0.0));
    }
}

/// A static scene whose images are renders of its own converged,
/// view-independent cloud should look certain nearly everywhere.
#[test]
fn static_scene_is_certain() {
    let fixture = generate(FixtureKind::Ring34, &TestgenConfig::default()).unwrap();
    let init = init_cloud(
        &fixture.dataset.sfm_points,
        &InitConfig {
            sh_degree: 0,
            ..Default::default()
        },
    )
    .unwrap();
    let weights: Vec<MaskMap> = fixture.dataset.views.iter().map(|v| MaskMap::filled(v.image.width, v.image.height, 1.0)).collect();
    let config = TrainConfig {
        iterations: 2000,
        ..Default::default()
    };
    let cloud = train(init, &fixture.dataset, &weights, &config).unwrap().cloud;
    let mut dataset = fixture.dataset.clone();
    let mut alphas = Vec::new();
    for v in &mut dataset.views {
        let out = render(&cloud, &v.camera, [0.0; 3]);
        v.image = out.color;
        alphas.push(out.alpha);
    }
    let maps = uncertainty_maps(&cloud, &dataset, &UncertaintyConfig::default(), Exec::default()).unwrap();
    let (mut covered, mut certain) = (0usize, 0usize);
    for (u, a) in maps.iter().zip(&alphas) {
        for (&uv, &av) in u.data.iter().zip(&a.data) {
            if av > 0.5 {
                covered += 1;
                if uv <= 0.05 {
                    certain += 1;
                }
            }
        }
    }
    let fraction = certain as f64 / covered as f64;
    assert!(fraction >= 0.99, "only {fraction:.4} of covered pixels have uncertainty <= 0.05");
}

proptest! {
    #[test]
    fn fused_mask_is_a_valid_weight(u in 0.0..=1.0f64, m in 0.0..=1.0f64, theta in 0.0..3.0f64) {
        let f = fuse1(u, m, theta);
        prop_assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn fuse_is_monotone(u in 0.0..=1.0f64, du in 0.0..=1.0f64, theta in 0.0..=1.0f64, dt in 0.0..=1.0f64) {
        prop_assert!(fuse1(u + du, 0.0, theta) >= fuse1(u, 0.0, theta));
        prop_assert!(fuse1(u, 1.0, theta + dt) >= fuse1(u, 1.0, theta));
    }

    #[test]
    fn normalised_map_is_bounded_and_scale_free(
        raw in prop::collection::vec(0.0..1.0f64, 16),
        scale in 1e-3..1e3f64,
    ) {
        let map = ScalarMap { width: 4, height: 4, data: raw.clone() };
        let scaled = ScalarMap { width: 4, height: 4, data: raw.iter().map(|v| v * scale).collect() };
        let a = normalize_uncertainty(&map);
        let b = normalize_uncertainty(&scaled);
        for (x, y) in a.data.iter().zip(&b.data) {
            prop_assert!((0.0..=1.0).contains(x));
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn view_order_does_not_matter(
        colors in prop::collection::vec(prop::array::uniform3(0.0..=1.0f64), 5),
        rotate in 0usize..5,
        x in prop::array::uniform3(-0.2..0.2f64),
    ) {
        let cams = ring(5);
        let x = Vector3::from(x);
        let depths = flat_depths(&cams, &x);
        let images: Vec<ImageBuffer> = colors.iter().map(|c| ImageBuffer::filled(24, 24, *c)).collect();
        let views: Vec<DepthView<'_>> = (0..5)
            .map(|j| DepthView { camera: &cams[j], image: &images[j], depth: &depths[j] })
            .collect();
        let mut permuted = views.clone();
        permuted.rotate_left(rotate);
        permuted.swap(0, 4);
        let a = point_uncertainty(&x, &views, 0.05);
        let b = point_uncertainty(&x, &permuted, 0.05);
        prop_assert!((a - b).abs() <= 1e-12);
    }
}
