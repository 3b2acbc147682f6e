//! Converter from COLMAP's text model (`cameras.txt`, `images.txt`,
//! `points3D.txt`). Supports the PINHOLE and SIMPLE_PINHOLE camera models.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::camera::CameraView;
use super::cloud::SfmPoint;
use super::dataset::{SceneDataset, SceneView};
use super::image::{quantize_u8, ImageBuffer, MaskMap};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
struct Intrinsics {
    width: usize,
    height: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

fn parse_err(file: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

fn num<T: std::str::FromStr>(tok: Option<&&str>, file: &str, line: usize, what: &str) -> Result<T> {
    tok.ok_or_else(|| parse_err(file, line, format!("missing {what}")))?
        .parse()
        .map_err(|_| parse_err(file, line, format!("bad {what}")))
}

fn parse_cameras(text: &str) -> Result<HashMap<u32, Intrinsics>> {
    const F: &str = "cameras.txt";
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        let id: u32 = num(t.first(), F, ln, "camera id")?;
        let model = *t.get(1).ok_or_else(|| parse_err(F, ln, "missing model"))?;
        let width = num(t.get(2), F, ln, "width")?;
        let height = num(t.get(3), F, ln, "height")?;
        let p = |k: usize, what: &str| -> Result<f64> { num(t.get(4 + k), F, ln, what) };
        let intr = match model {
            "SIMPLE_PINHOLE" => {
                let f = p(0, "f")?;
                Intrinsics {
                    width,
                    height,
                    fx: f,
                    fy: f,
                    cx: p(1, "cx")?,
                    cy: p(2, "cy")?,
                }
            }
            "PINHOLE" => Intrinsics {
                width,
                height,
                fx: p(0, "fx")?,
                fy: p(1, "fy")?,
                cx: p(2, "cx")?,
                cy: p(3, "cy")?,
            },
            other => return Err(Error::UnsupportedCameraModel(other.to_string())),
        };
        out.insert(id, intr);
    }
    Ok(out)
}

struct ImageEntry {
    image_id: u32,
    q: [f64; 4],
    t: [f64; 3],
    camera_id: u32,
    name: String,
}

fn parse_images(text: &str) -> Result<Vec<ImageEntry>> {
    const F: &str = "images.txt";
    let mut out = Vec::new();
    // Entries are line pairs: pose line, then a (possibly empty) points2D line.
    let mut expecting_pose = true;
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.trim();
        if line.starts_with('#') {
            continue;
        }
        if !expecting_pose {
            expecting_pose = true;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() < 10 {
            return Err(parse_err(F, ln, "expected IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME"));
        }
        let f = |k: usize, what: &str| -> Result<f64> { num(t.get(k), F, ln, what) };
        out.push(ImageEntry {
            image_id: num(t.first(), F, ln, "image id")?,
            q: [f(1, "qw")?, f(2, "qx")?, f(3, "qy")?, f(4, "qz")?],
            t: [f(5, "tx")?, f(6, "ty")?, f(7, "tz")?],
            camera_id: num(t.get(8), F, ln, "camera id")?,
            name: t[9..].join(" "),
        });
        expecting_pose = false;
    }
    Ok(out)
}

fn parse_points(text: &str) -> Result<Vec<SfmPoint>> {
    const F: &str = "points3D.txt";
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        let f = |k: usize, what: &str| -> Result<f64> { num(t.get(k), F, ln, what) };
        let c = |k: usize, what: &str| -> Result<u8> { num(t.get(k), F, ln, what) };
        out.push(SfmPoint {
            position: [f(1, "x")?, f(2, "y")?, f(3, "z")?],
            color: [c(4, "r")?, c(5, "g")?, c(6, "b")?].map(|v| f64::from(v) / 255.0),
        });
    }
    Ok(out)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Directory holding the images named in `images.txt`: `<model>/images`,
/// falling back to the model directory's sibling `images/`.
fn resolve_dir(model_dir: &Path, sub: &str) -> PathBuf {
    let inner = model_dir.join(sub);
    if inner.is_dir() {
        return inner;
    }
    model_dir.parent().map(|p| p.join(sub)).unwrap_or(inner)
}

pub fn import_colmap(model_dir: &Path) -> Result<SceneDataset> {
    let cams = parse_cameras(&read_text(&model_dir.join("cameras.txt"))?)?;
    let mut entries = parse_images(&read_text(&model_dir.join("images.txt"))?)?;
    let points_path = model_dir.join("points3D.txt");
    let sfm_points = if points_path.exists() {
        parse_points(&read_text(&points_path)?)?
    } else {
        Vec::new()
    };
    entries.sort_by(|a, b| a.name.cmp(&b.name));
    let image_dir = resolve_dir(model_dir, "images");
    let mask_dir = resolve_dir(model_dir, "masks");
    let mut views = Vec::with_capacity(entries.len());
    for e in entries {
        let intr = cams
            .get(&e.camera_id)
            .ok_or_else(|| Error::MissingCameraEntry(e.name.clone()))?;
        let qn = e.q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let camera = CameraView {
            id: e.image_id,
            fx: intr.fx,
            fy: intr.fy,
            cx: intr.cx,
            cy: intr.cy,
            width: intr.width,
            height: intr.height,
            qw: e.q[0] / qn,
            qx: e.q[1] / qn,
            qy: e.q[2] / qn,
            qz: e.q[3] / qn,
            tx: e.t[0],
            ty: e.t[1],
            tz: e.t[2],
        };
        let image = ImageBuffer::load_png(&image_dir.join(&e.name))?;
        let mask_path = mask_dir.join(&e.name);
        let mask = if mask_path.exists() {
            MaskMap::load_png(&mask_path)?
        } else {
            MaskMap::zeros(image.width, image.height)
        };
        views.push(SceneView {
            camera,
            image,
            mask,
            name: e.name,
        });
    }
    let dataset = SceneDataset {
        name: model_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        views,
        sfm_points,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Writes the text model for a dataset (one PINHOLE camera per view; image
/// and camera ids equal the view id).
pub fn export_colmap(dataset: &SceneDataset, model_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(model_dir).map_err(|e| Error::io(model_dir, e))?;
    let mut cameras = String::from("# CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
    let mut images = String::from("# IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n# POINTS2D[] as (X, Y, POINT3D_ID)\n");
    for v in &dataset.views {
        let c = &v.camera;
        writeln!(cameras, "{} PINHOLE {} {} {} {} {} {}", c.id, c.width, c.height, c.fx, c.fy, c.cx, c.cy).unwrap();
        writeln!(images, "{} {} {} {} {} {} {} {} {} {}", c.id, c.qw, c.qx, c.qy, c.qz, c.tx, c.ty, c.tz, c.id, v.name).unwrap();
        images.push('\n');
    }
    let mut points = String::from("# POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[]\n");
    for (i, p) in dataset.sfm_points.iter().enumerate() {
        let [r, g, b] = p.color.map(quantize_u8);
        writeln!(points, "{} {} {} {} {r} {g} {b} 0", i + 1, p.position[0], p.position[1], p.position[2]).unwrap();
    }
    for (name, text) in [("cameras.txt", cameras), ("images.txt", images), ("points3D.txt", points)] {
        let path = model_dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
