//! Procedural fixture scenes rendered by analytic ray tracing.

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{
    export_colmap, save_dataset, CameraView, ImageBuffer, MaskMap, SceneDataset, SceneView, SfmPoint,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixtureKind {
    /// 24 views on a ring around a textured 2×2 m plane, which stays fully
    /// inside every frame.
    Plane24,
    /// 34 views on a ring around an ellipsoid resting on a plane.
    Ring34,
    /// The plane scene with a moving blob in 8 of the 24 views.
    Distractor,
}

impl std::str::FromStr for FixtureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plane24" => Ok(FixtureKind::Plane24),
            "ring34" => Ok(FixtureKind::Ring34),
            "distractor" => Ok(FixtureKind::Distractor),
            other => Err(Error::InvalidConfig(format!("unknown fixture kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestgenConfig {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Keep every n-th frame of the dense camera trajectory; stands in for
    /// resampling a video at a lower frame rate.
    pub frame_stride: usize,
    /// Standard deviation of the position noise added to SfM points, metres.
    pub point_noise: f64,
}

impl Default for TestgenConfig {
    fn default() -> Self {
        TestgenConfig {
            seed: 0,
            width: 64,
            height: 64,
            frame_stride: 1,
            point_noise: 0.0,
        }
    }
}

/// Generated scene plus ground truth.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub kind: FixtureKind,
    pub dataset: SceneDataset,
    /// Renders without the transient blob.
    pub clean: Vec<ImageBuffer>,
    /// Exact blob footprint per view (empty where the blob is absent).
    pub footprints: Vec<MaskMap>,
    /// Tracker-style masks: the blob footprint slightly dilated.
    pub track_masks: Vec<MaskMap>,
    /// Per view, the union of the blob's footprints over all its positions.
    pub regions: Vec<MaskMap>,
    pub blob_views: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureInfo {
    pub kind: FixtureKind,
    pub config: TestgenConfig,
    pub views: usize,
    pub points: usize,
    pub blob_views: Vec<usize>,
}

const PLANE24_VIEWS: usize = 24;
const RING34_VIEWS: usize = 34;
const PLANE24_POINTS: usize = 1024;
const BLOB_PERIOD: usize = 3;
const TRACK_DILATION: f64 = 1.03;
const SUPERSAMPLE: usize = 3;

#[derive(Debug, Clone, Copy)]
enum Shape {
    /// Axis-aligned rectangle on `z = 0`.
    Plane { half_x: f64, half_y: f64 },
    Ellipsoid { center: Vector3<f64>, radii: Vector3<f64> },
}

#[derive(Debug, Clone, Copy)]
enum Paint {
    PlaneTexture,
    ObjectTexture,
    Solid([f64; 3]),
}

#[derive(Debug, Clone, Copy)]
struct Primitive {
    shape: Shape,
    paint: Paint,
}

fn plane_texture(x: f64, y: f64) -> [f64; 3] {
    use std::f64::consts::TAU;
    [
        0.5 + 0.25 * (TAU * x / 0.9).sin() * (TAU * y / 1.1).cos(),
        0.5 + 0.2 * (TAU * (x + y) / 1.0).sin(),
        0.45 + 0.2 * (TAU * (x - 0.5 * y) / 1.3).cos(),
    ]
}

fn object_texture(p: &Vector3<f64>) -> [f64; 3] {
    use std::f64::consts::TAU;
    [
        0.75 + 0.15 * (TAU * p.z / 0.5).sin(),
        0.35 + 0.15 * (TAU * (p.x + p.y) / 0.6).cos(),
        0.2 + 0.1 * (TAU * p.x / 0.7).sin(),
    ]
}

impl Primitive {
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        match self.shape {
            Shape::Plane { half_x, half_y } => {
                if d.z.abs() < 1e-12 {
                    return None;
                }
                let t = -o.z / d.z;
                let p = o + d * t;
                (t > 0.0 && p.x.abs() <= half_x && p.y.abs() <= half_y).then_some((t, p))
            }
            Shape::Ellipsoid { center, radii } => {
                let oc = (o - center).component_div(&radii);
                let dd = d.component_div(&radii);
                let a = dd.dot(&dd);
                let b = 2.0 * oc.dot(&dd);
                let c = oc.dot(&oc) - 1.0;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let t0 = (-b - s) / (2.0 * a);
                let t1 = (-b + s) / (2.0 * a);
                let t = if t0 > 0.0 { t0 } else { t1 };
                (t > 0.0).then(|| (t, o + d * t))
            }
        }
    }

    fn color(&self, p: &Vector3<f64>) -> [f64; 3] {
        match self.paint {
            Paint::PlaneTexture => plane_texture(p.x, p.y),
            Paint::ObjectTexture => object_texture(p),
            Paint::Solid(c) => c,
        }
    }
}

/// Nearest hit along the ray, as `(primitive index, colour)`.
fn trace(scene: &[Primitive], o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(usize, [f64; 3])> {
    let mut best: Option<(f64, usize, Vector3<f64>)> = None;
    for (i, prim) in scene.iter().enumerate() {
        if let Some((t, p)) = prim.intersect(o, d) {
            if best.is_none_or(|(bt, _, _)| t < bt) {
                best = Some((t, i, p));
            }
        }
    }
    best.map(|(_, i, p)| (i, scene[i].color(&p)))
}

fn ray(camera: &CameraView, u: f64, v: f64) -> (Vector3<f64>, Vector3<f64>) {
    let rt = camera.rotation().transpose();
    let dir = rt * Vector3::new((u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, 1.0);
    (camera.center(), dir.normalize())
}

/// Supersampled render; also returns the coverage fraction of `track`
/// (if given) per pixel.
fn raytrace(scene: &[Primitive], camera: &CameraView, track: Option<usize>) -> (ImageBuffer, Vec<f64>) {
    let (w, h) = (camera.width, camera.height);
    let mut img = ImageBuffer::new(w, h);
    let mut coverage = vec![0.0; w * h];
    let n = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            let mut hits = 0.0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let u = x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
                    let v = y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
                    let (o, d) = ray(camera, u, v);
                    if let Some((i, c)) = trace(scene, &o, &d) {
                        for ch in 0..3 {
                            acc[ch] += c[ch];
                        }
                        if Some(i) == track {
                            hits += 1.0;
                        }
                    }
                }
            }
            img.set_pixel(x, y, acc.map(|v| (v / n).clamp(0.0, 1.0)));
            coverage[y * w + x] = hits / n;
        }
    }
    (img, coverage)
}

fn coverage_mask(w: usize, h: usize, coverage: &[f64]) -> MaskMap {
    MaskMap {
        width: w,
        height: h,
        data: coverage.iter().map(|&c| if c >= 0.5 { 1.0 } else { 0.0 }).collect(),
    }
}

fn ring_cameras(count: usize, stride: usize, radius: f64, height: f64, target: Vector3<f64>, focal_64: f64, config: &TestgenConfig) -> Vec<CameraView> {
    let focal = focal_64 * config.width as f64 / 64.0;
    (0..count)
        .step_by(stride.max(1))
        .enumerate()
        .map(|(id, k)| {
            let a = std::f64::consts::TAU * k as f64 / count as f64;
            let eye = Vector3::new(radius * a.cos(), radius * a.sin(), height);
            CameraView::look_at(id as u32, eye, target, Vector3::z(), focal, config.width, config.height)
        })
        .collect()
}

fn blob_primitive(position: usize) -> Primitive {
    let a = std::f64::consts::TAU * position as f64 / 8.0;
    Primitive {
        shape: Shape::Ellipsoid {
            center: Vector3::new(0.35 * a.cos(), 0.35 * a.sin(), 0.2),
            radii: Vector3::new(0.26, 0.22, 0.2),
        },
        paint: Paint::Solid([0.95, 0.15, 0.85]),
    }
}

fn dilated(p: Primitive, factor: f64) -> Primitive {
    match p.shape {
        Shape::Ellipsoid { center, radii } => Primitive {
            shape: Shape::Ellipsoid {
                center,
                radii: radii * factor,
            },
            ..p
        },
        Shape::Plane { .. } => p,
    }
}

fn plane_points(rng: &mut impl Rng, n_side: usize, half: f64, noise: f64) -> Vec<SfmPoint> {
    let step = 2.0 * half / n_side as f64;
    let mut pts = Vec::with_capacity(n_side * n_side);
    for i in 0..n_side {
        for j in 0..n_side {
            let x = -half + (i as f64 + rng.random_range(0.1..0.9)) * step;
            let y = -half + (j as f64 + rng.random_range(0.1..0.9)) * step;
            let jitter = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ) * noise;
            pts.push(SfmPoint {
                position: [x + jitter.x, y + jitter.y, jitter.z],
                color: plane_texture(x, y),
            });
        }
    }
    pts
}

fn ellipsoid_points(rng: &mut impl Rng, n: usize, center: Vector3<f64>, radii: Vector3<f64>) -> Vec<SfmPoint> {
    (0..n)
        .map(|_| {
            let z: f64 = rng.random_range(-1.0..1.0);
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - z * z).sqrt();
            let p = center + Vector3::new(r * phi.cos(), r * phi.sin(), z).component_mul(&radii);
            SfmPoint {
                position: [p.x, p.y, p.z],
                color: object_texture(&p),
            }
        })
        .collect()
}

/// Generates a fixture in memory. Images are quantised to 8 bits so that
/// the in-memory scene equals what [`write_fixture`] puts on disk.
pub fn generate(kind: FixtureKind, config: &TestgenConfig) -> Result<Fixture> {
    if config.width < 8 || config.height < 8 || config.frame_stride == 0 {
        return Err(Error::InvalidConfig("fixture needs at least 8×8 pixels and a positive stride".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (cameras, scene, points, name) = match kind {
        FixtureKind::Plane24 | FixtureKind::Distractor => {
            let cams = ring_cameras(PLANE24_VIEWS, config.frame_stride, 3.0, 2.0, Vector3::zeros(), 72.0, config);
            let scene = vec![Primitive {
                shape: Shape::Plane { half_x: 1.0, half_y: 1.0 },
                paint: Paint::PlaneTexture,
            }];
            let side = (PLANE24_POINTS as f64).sqrt() as usize;
            let pts = plane_points(&mut rng, side, 1.0, config.point_noise);
            let name = if kind == FixtureKind::Plane24 { "plane24" } else { "distractor" };
            (cams, scene, pts, name)
        }
        FixtureKind::Ring34 => {
            let center = Vector3::new(0.0, 0.0, 0.3);
            let radii = Vector3::new(0.35, 0.25, 0.3);
            let cams = ring_cameras(RING34_VIEWS, config.frame_stride, 3.0, 2.5, Vector3::new(0.0, 0.0, 0.2), 128.0, config);
            let scene = vec![
                Primitive {
                    shape: Shape::Plane { half_x: 3.0, half_y: 3.0 },
                    paint: Paint::PlaneTexture,
                },
                Primitive {
                    shape: Shape::Ellipsoid { center, radii },
                    paint: Paint::ObjectTexture,
                },
            ];
            let mut pts = plane_points(&mut rng, 64, 3.0, config.point_noise);
            pts.retain(|p| {
                let q = (Vector3::from(p.position) - center).component_div(&radii);
                q.norm() > 1.0
            });
            pts.extend(ellipsoid_points(&mut rng, 1024, center, radii));
            (cams, scene, pts, "ring34")
        }
    };

    let (w, h) = (config.width, config.height);
    let n = cameras.len();
    let blob_views: Vec<usize> = if kind == FixtureKind::Distractor {
        (0..n).filter(|i| i % BLOB_PERIOD == 1).take(8).collect()
    } else {
        Vec::new()
    };
    let mut views = Vec::with_capacity(n);
    let mut clean = Vec::with_capacity(n);
    let mut footprints = Vec::with_capacity(n);
    let mut track_masks = Vec::with_capacity(n);
    let mut regions = Vec::with_capacity(n);
    for (i, cam) in cameras.iter().enumerate() {
        let (clean_img, _) = raytrace(&scene, cam, None);
        let clean_img = clean_img.quantized();
        let mut image = clean_img.clone();
        let mut footprint = MaskMap::zeros(w, h);
        let mut track = MaskMap::zeros(w, h);
        let mut region = MaskMap::zeros(w, h);
        for (slot, &bv) in blob_views.iter().enumerate() {
            let blob = blob_primitive(slot);
            let mut with_blob = scene.clone();
            with_blob.push(blob);
            let (img, cov) = raytrace(&with_blob, cam, Some(scene.len()));
            let fp = coverage_mask(w, h, &cov);
            for (r, f) in region.data.iter_mut().zip(&fp.data) {
                *r = r.max(*f);
            }
            if bv == i {
                image = img.quantized();
                footprint = fp;
                let mut dil = scene.clone();
                dil.push(dilated(blob, TRACK_DILATION));
                let (_, dcov) = raytrace(&dil, cam, Some(scene.len()));
                track = coverage_mask(w, h, &dcov);
            }
        }
        views.push(SceneView {
            camera: cam.clone(),
            image,
            mask: MaskMap::zeros(w, h),
            name: format!("view_{i:03}.png"),
        });
        clean.push(clean_img);
        footprints.push(footprint);
        track_masks.push(track);
        regions.push(region);
    }
    let dataset = SceneDataset {
        name: name.to_string(),
        views,
        sfm_points: points,
    };
    dataset.validate()?;
    Ok(Fixture {
        kind,
        dataset,
        clean,
        footprints,
        track_masks,
        regions,
        blob_views,
    })
}

fn save_masks(dir: &Path, names: &[String], masks: &[MaskMap]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, m) in names.iter().zip(masks) {
        m.save_png(&dir.join(name))?;
    }
    Ok(())
}

/// Writes `images/`, `cameras.json`, `points.ply`, `clean/`, and for the
/// distractor fixture `footprints/`, `track_masks/` and `regions/`, plus a
/// COLMAP text export under `colmap/` and `fixture.json`.
pub fn write_fixture(fixture: &Fixture, config: &TestgenConfig, dir: &Path) -> Result<()> {
    save_dataset(&fixture.dataset, dir)?;
    let names: Vec<String> = fixture.dataset.views.iter().map(|v| v.name.clone()).collect();
    let clean_dir = dir.join("clean");
    std::fs::create_dir_all(&clean_dir).map_err(|e| Error::io(&clean_dir, e))?;
    for (name, img) in names.iter().zip(&fixture.clean) {
        img.save_png(&clean_dir.join(name))?;
    }
    if fixture.kind == FixtureKind::Distractor {
        save_masks(&dir.join("footprints"), &names, &fixture.footprints)?;
        save_masks(&dir.join("track_masks"), &names, &fixture.track_masks)?;
        save_masks(&dir.join("regions"), &names, &fixture.regions)?;
    }
    export_colmap(&fixture.dataset, &dir.join("colmap"))?;
    let info = FixtureInfo {
        kind: fixture.kind,
        config: *config,
        views: fixture.dataset.views.len(),
        points: fixture.dataset.sfm_points.len(),
        blob_views: fixture.blob_views.clone(),
    };
    let path = dir.join("fixture.json");
    std::fs::write(&path, serde_json::to_string_pretty(&info).expect("info serialises")).map_err(|e| Error::io(&path, e))
}

/// Generates and writes a fixture.
pub fn testgen(kind: FixtureKind, config: &TestgenConfig, dir: &Path) -> Result<Fixture> {
    let fixture = generate(kind, config)?;
    write_fixture(&fixture, config, dir)?;
    Ok(fixture)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distractor::mask_iou;

    #[test]
    fn plane24_shape() {
        let f = generate(FixtureKind::Plane24, &TestgenConfig::default()).unwrap();
        assert_eq!(f.dataset.views.len(), 24);
        assert_eq!(f.dataset.sfm_points.len(), 1024);
        assert!(f.blob_views.is_empty());
        // the whole plane is in frame in every view
        for v in &f.dataset.views {
            for (x, y) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
                let (uv, _) = v.camera.project(&Vector3::new(x, y, 0.0)).unwrap();
                assert!(v.camera.in_frame(uv), "plane corner leaves view {}", v.camera.id);
            }
        }
    }

    #[test]
    fn distractor_blob_views() {
        let f = generate(FixtureKind::Distractor, &TestgenConfig::default()).unwrap();
        assert_eq!(f.blob_views.len(), 8);
        for i in 0..24 {
            let has = !f.footprints[i].is_all_zero();
            assert_eq!(has, f.blob_views.contains(&i), "view {i}");
            if has {
                assert!(mask_iou(&f.track_masks[i], &f.footprints[i]).unwrap() >= 0.9);
                assert_ne!(f.dataset.views[i].image, f.clean[i]);
            } else {
                assert_eq!(f.dataset.views[i].image, f.clean[i]);
            }
        }
    }

    #[test]
    fn deterministic() {
        let c = TestgenConfig { seed: 4, ..Default::default() };
        let a = generate(FixtureKind::Ring34, &c).unwrap();
        let b = generate(FixtureKind::Ring34, &c).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.dataset.views.len(), 34);
    }

    #[test]
    fn frame_stride_subsamples() {
        let c = TestgenConfig { frame_stride: 2, ..Default::default() };
        assert_eq!(generate(FixtureKind::Ring34, &c).unwrap().dataset.views.len(), 17);
    }
}
