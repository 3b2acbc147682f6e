//! Image quality metrics and synthetic fixture generation.

pub mod testgen;

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scene::{ImageBuffer, MaskMap};

pub use crate::train::ssim::ssim;

/// Reported in place of +infinity for identical images.
pub const PSNR_IDENTICAL: f64 = 99.0;

pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::dims("psnr operands", a.dims(), b.dims()));
    }
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64)
}

/// Peak signal-to-noise ratio of `[0, 1]` images in dB.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { PSNR_IDENTICAL } else { -10.0 * m.log10() })
}

/// PSNR restricted to the pixels where `mask > 0.5`.
pub fn psnr_masked(a: &ImageBuffer, b: &ImageBuffer, mask: &MaskMap) -> Result<f64> {
    mse(a, b)?;
    if mask.dims() != a.dims() {
        return Err(Error::dims("mask", a.dims(), mask.dims()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, m) in mask.data.iter().enumerate() {
        if *m > 0.5 {
            for c in 0..3 {
                let d = a.data[p * 3 + c] - b.data[p * 3 + c];
                sum += d * d;
            }
            n += 3;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let m = sum / n as f64;
    Ok(if m == 0.0 { PSNR_IDENTICAL } else { -10.0 * m.log10() })
}

/// `(x0, y0, width, height)` of the box around the mask's positive pixels.
pub fn mask_bbox(mask: &MaskMap) -> Result<(usize, usize, usize, usize)> {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) > 0.0 {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == usize::MAX {
        return Err(Error::EmptyMask);
    }
    Ok((x0, y0, x1 - x0 + 1, y1 - y0 + 1))
}

/// Crops `image` to the bounding box of the positive pixels of `mask`.
pub fn masked_bbox_crop(image: &ImageBuffer, mask: &MaskMap) -> Result<ImageBuffer> {
    if mask.dims() != image.dims() {
        return Err(Error::dims("mask", image.dims(), mask.dims()));
    }
    let (x, y, w, h) = mask_bbox(mask)?;
    Ok(image.crop(x, y, w, h))
}

/// Scores of one test image against its reference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageScore {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// PSNR and SSIM of `test` against `reference`, both cropped to the mask's
/// bounding box when a mask is given.
pub fn score_pair(reference: &ImageBuffer, test: &ImageBuffer, mask: Option<&MaskMap>) -> Result<(f64, f64)> {
    if reference.dims() != test.dims() {
        return Err(Error::dims("test image", reference.dims(), test.dims()));
    }
    match mask {
        Some(m) => {
            let a = masked_bbox_crop(reference, m)?;
            let b = masked_bbox_crop(test, m)?;
            Ok((psnr(&a, &b)?, ssim(&a, &b)?))
        }
        None => Ok((psnr(reference, test)?, ssim(reference, test)?)),
    }
}

/// Scores every PNG of `ref_dir` against the same-named file in `test_dir`.
/// With `masks_dir`, each pair is cropped to its mask's bounding box and
/// pairs whose mask is missing or empty are skipped.
pub fn score_directories(ref_dir: &Path, test_dir: &Path, masks_dir: Option<&Path>) -> Result<Vec<ImageScore>> {
    let mut names: Vec<String> = std::fs::read_dir(ref_dir)
        .map_err(|e| Error::io(ref_dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
        .collect();
    names.sort();
    let mut scores = Vec::with_capacity(names.len());
    for name in names {
        let reference = ImageBuffer::load_png(&ref_dir.join(&name))?;
        let test = ImageBuffer::load_png(&test_dir.join(&name))?;
        let mask = match masks_dir {
            Some(dir) => {
                let path = dir.join(&name);
                if !path.is_file() {
                    log::warn!("no mask for {name}; skipped");
                    continue;
                }
                let m = MaskMap::load_png(&path)?;
                if m.is_all_zero() {
                    log::warn!("empty mask for {name}; skipped");
                    continue;
                }
                Some(m)
            }
            None => None,
        };
        let (p, s) = score_pair(&reference, &test, mask.as_ref())?;
        scores.push(ImageScore { name, psnr: p, ssim: s });
    }
    Ok(scores)
}

/// CSV with one row per image and a final `mean` row.
pub fn scores_csv(scores: &[ImageScore]) -> String {
    let mut out = String::from("image,psnr,ssim\n");
    for s in scores {
        let _ = writeln!(out, "{},{:.4},{:.6}", s.name, s.psnr, s.ssim);
    }
    if !scores.is_empty() {
        let n = scores.len() as f64;
        let p = scores.iter().map(|s| s.psnr).sum::<f64>() / n;
        let q = scores.iter().map(|s| s.ssim).sum::<f64>() / n;
        let _ = writeln!(out, "mean,{p:.4},{q:.6}");
    }
    out
}
