//! On-disk scene layout:
//!
//! ```text
//! scene/
//!   cameras.json        [{id, fx, fy, cx, cy, width, height, qw, qx, qy, qz, tx, ty, tz}, ...]
//!   images/*.png        8-bit RGB; the trailing digits of the stem are the camera id
//!   masks/*.png         optional, 8-bit gray, 255 = remove; names mirror images/
//!   points.ply          optional SfM points (x y z double, red green blue uchar)
//! ```

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use super::camera::CameraView;
use super::cloud::SfmPoint;
use super::image::{quantize_u8, ImageBuffer, MaskMap};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneView {
    pub camera: CameraView,
    pub image: ImageBuffer,
    pub mask: MaskMap,
    /// File name under `images/`.
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneDataset {
    pub name: String,
    pub views: Vec<SceneView>,
    pub sfm_points: Vec<SfmPoint>,
}

impl SceneDataset {
    pub fn validate(&self) -> Result<()> {
        if self.views.len() < 2 {
            return Err(Error::TooFewViews {
                found: self.views.len(),
                needed: 2,
            });
        }
        for v in &self.views {
            v.camera.validate()?;
            v.image.validate()?;
            let cam_dims = (v.camera.width, v.camera.height);
            if v.image.dims() != cam_dims {
                return Err(Error::dims(format!("image {}", v.name), cam_dims, v.image.dims()));
            }
            if v.mask.dims() != v.image.dims() {
                return Err(Error::dims(format!("mask {}", v.name), v.image.dims(), v.mask.dims()));
            }
        }
        Ok(())
    }

    pub fn cameras(&self) -> Vec<CameraView> {
        self.views.iter().map(|v| v.camera.clone()).collect()
    }

    pub fn masks(&self) -> Vec<MaskMap> {
        self.views.iter().map(|v| v.mask.clone()).collect()
    }

    /// Keeps the listed views, in the given order.
    pub fn subset(&self, indices: &[usize]) -> SceneDataset {
        SceneDataset {
            name: self.name.clone(),
            views: indices.iter().map(|&i| self.views[i].clone()).collect(),
            sfm_points: self.sfm_points.clone(),
        }
    }
}

/// Trailing decimal digits of a file stem, e.g. `view_0012.png` -> 12.
pub fn id_from_name(name: &str) -> Option<u32> {
    let stem = Path::new(name).file_stem()?.to_str()?;
    let digits: String = stem.chars().rev().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return None;
    }
    digits.chars().rev().collect::<String>().parse().ok()
}

fn list_pngs(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.to_ascii_lowercase().ends_with(".png") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

pub fn read_cameras_json(path: &Path) -> Result<Vec<CameraView>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_cameras_json(cameras: &[CameraView], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(cameras).expect("cameras serialise");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads and validates a scene directory. Missing masks default to zero.
pub fn load_dataset(dir: &Path) -> Result<SceneDataset> {
    let cameras = read_cameras_json(&dir.join("cameras.json"))?;
    let by_id: HashMap<u32, &CameraView> = cameras.iter().map(|c| (c.id, c)).collect();
    let image_dir = dir.join("images");
    let mask_dir = dir.join("masks");
    let mut views = Vec::new();
    for name in list_pngs(&image_dir)? {
        let camera = id_from_name(&name)
            .and_then(|id| by_id.get(&id))
            .ok_or_else(|| Error::MissingCameraEntry(name.clone()))?;
        let image = ImageBuffer::load_png(&image_dir.join(&name))?;
        let cam_dims = (camera.width, camera.height);
        if image.dims() != cam_dims {
            return Err(Error::dims(format!("image {name}"), cam_dims, image.dims()));
        }
        let mask_path = mask_dir.join(&name);
        let mask = if mask_path.exists() {
            let m = MaskMap::load_png(&mask_path)?;
            if m.dims() != image.dims() {
                return Err(Error::dims(format!("mask {name}"), image.dims(), m.dims()));
            }
            m
        } else {
            MaskMap::zeros(image.width, image.height)
        };
        views.push(SceneView {
            camera: (*camera).clone(),
            image,
            mask,
            name,
        });
    }
    let points_path = dir.join("points.ply");
    let sfm_points = if points_path.exists() {
        read_points_ply(&points_path)?
    } else {
        Vec::new()
    };
    let dataset = SceneDataset {
        name: dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        views,
        sfm_points,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Writes a scene in the layout `load_dataset` reads. Masks are written only
/// when non-zero.
pub fn save_dataset(dataset: &SceneDataset, dir: &Path) -> Result<()> {
    let image_dir = dir.join("images");
    std::fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    let cams: Vec<CameraView> = dataset.cameras();
    write_cameras_json(&cams, &dir.join("cameras.json"))?;
    let any_mask = dataset.views.iter().any(|v| !v.mask.is_all_zero());
    let mask_dir = dir.join("masks");
    if any_mask {
        std::fs::create_dir_all(&mask_dir).map_err(|e| Error::io(&mask_dir, e))?;
    }
    for v in &dataset.views {
        v.image.save_png(&image_dir.join(&v.name))?;
        if any_mask {
            v.mask.save_png(&mask_dir.join(&v.name))?;
        }
    }
    if !dataset.sfm_points.is_empty() {
        write_points_ply(&dataset.sfm_points, &dir.join("points.ply"))?;
    }
    Ok(())
}

pub fn write_points_ply(points: &[SfmPoint], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        points.len()
    );
    let mut buf = header.into_bytes();
    for p in points {
        for v in p.position {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend(p.color.map(quantize_u8));
    }
    out.write_all(&buf).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_points_ply(path: &Path) -> Result<Vec<SfmPoint>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = std::io::BufReader::new(file);
    let corrupt = |m: &str| Error::CorruptHeader(format!("{}: {m}", path.display()));
    let mut count = None;
    let mut line = String::new();
    let mut props = Vec::new();
    loop {
        line.clear();
        if input.read_line(&mut line).map_err(|e| Error::io(path, e))? == 0 {
            return Err(corrupt("unexpected end of header"));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["element", "vertex", n] => count = n.parse::<usize>().ok(),
            ["property", ty, name] => props.push((ty.to_string(), name.to_string())),
            _ => {}
        }
    }
    let expected = [
        ("double", "x"),
        ("double", "y"),
        ("double", "z"),
        ("uchar", "red"),
        ("uchar", "green"),
        ("uchar", "blue"),
    ];
    if props.len() != 6 || props.iter().zip(expected).any(|((t, n), (et, en))| t != et || n != en) {
        return Err(corrupt("unexpected point layout"));
    }
    let count = count.ok_or_else(|| corrupt("missing vertex count"))?;
    let mut body = Vec::new();
    input.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    if body.len() != count * 27 {
        return Err(corrupt("truncated body"));
    }
    Ok(body
        .chunks_exact(27)
        .map(|r| {
            let f = |i: usize| f64::from_le_bytes(r[i * 8..i * 8 + 8].try_into().unwrap());
            SfmPoint {
                position: [f(0), f(1), f(2)],
                color: [r[24], r[25], r[26]].map(|c| f64::from(c) / 255.0),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_camera(id: u32, w: usize, h: usize) -> CameraView {
        CameraView {
            id,
            fx: 10.0,
            fy: 10.0,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            width: w,
            height: h,
            qw: 1.0,
            qx: 0.0,
            qy: 0.0,
            qz: 0.0,
            tx: 0.0,
            ty: 0.0,
            tz: id as f64,
        }
    }

    fn write_scene(dir: &Path, n: u32, w: usize, h: usize) {
        std::fs::create_dir_all(dir.join("images")).unwrap();
        let cams: Vec<_> = (0..n).map(|i| tiny_camera(i, w, h)).collect();
        write_cameras_json(&cams, &dir.join("cameras.json")).unwrap();
        for i in 0..n {
            ImageBuffer::filled(w, h, [0.2, 0.4, 0.6])
                .save_png(&dir.join("images").join(format!("{i:04}.png")))
                .unwrap();
        }
    }

    #[test]
    fn absent_masks_default_to_zero() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(dir.path(), 3, 8, 6);
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.views.len(), 3);
        assert!(ds.views.iter().all(|v| v.mask.is_all_zero()));
        assert!(ds.sfm_points.is_empty());
    }

    #[test]
    fn mismatched_mask_is_an_error_naming_the_file() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(dir.path(), 2, 120, 80);
        std::fs::create_dir_all(dir.path().join("masks")).unwrap();
        MaskMap::zeros(100, 80).save_png(&dir.path().join("masks/0001.png")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        match err {
            Error::DimensionMismatch { what, .. } => assert!(what.contains("0001.png")),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn image_without_camera_entry() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(dir.path(), 2, 8, 6);
        ImageBuffer::new(8, 6).save_png(&dir.path().join("images/0009.png")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::MissingCameraEntry(n)) if n == "0009.png"));
    }

    #[test]
    fn unreadable_image_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(dir.path(), 2, 8, 6);
        std::fs::write(dir.path().join("images/0001.png"), b"not a png").unwrap();
        match load_dataset(dir.path()) {
            Err(Error::UnreadableImage { path, .. }) => assert!(path.ends_with("0001.png")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn points_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pts = vec![
            SfmPoint {
                position: [0.1, -2.0, 3.5],
                color: [1.0, 0.0, 128.0 / 255.0],
            };
            5
        ];
        let p = dir.path().join("points.ply");
        write_points_ply(&pts, &p).unwrap();
        assert_eq!(read_points_ply(&p).unwrap(), pts);
    }

    #[test]
    fn id_parsing() {
        assert_eq!(id_from_name("0012.png"), Some(12));
        assert_eq!(id_from_name("view_7.png"), Some(7));
        assert_eq!(id_from_name("view.png"), None);
    }
}
