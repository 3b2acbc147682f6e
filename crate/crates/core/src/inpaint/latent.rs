//! Latent tensors, encoders, and mask downsampling.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scene::{ImageBuffer, MaskMap};

/// Channel-major `channels × height × width` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Latent {
    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Latent {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn gaussian(channels: usize, height: usize, width: usize, rng: &mut impl Rng) -> Self {
        let data = (0..channels * height * width).map(|_| StandardNormal.sample(rng)).collect();
        Latent {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn check_same_shape(&self, other: &Latent) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::LatentShape {
                expected: self.shape(),
                found: other.shape(),
            });
        }
        Ok(())
    }

    pub fn zip_map(&self, other: &Latent, f: impl Fn(f64, f64) -> f64) -> Latent {
        Latent {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            ..*self
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Latent {
        Latent {
            data: self.data.iter().map(|&a| f(a)).collect(),
            ..*self
        }
    }
}

/// Blend weights at latent resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl LatentMask {
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Area average of `mask` onto a `height × width` grid; values stay
/// continuous in `[0, 1]`.
pub fn downsample_mask(mask: &MaskMap, height: usize, width: usize) -> LatentMask {
    let sx = mask.width as f64 / width as f64;
    let sy = mask.height as f64 / height as f64;
    let mut data = Vec::with_capacity(width * height);
    for ly in 0..height {
        let (y0, y1) = (ly as f64 * sy, (ly + 1) as f64 * sy);
        for lx in 0..width {
            let (x0, x1) = (lx as f64 * sx, (lx + 1) as f64 * sx);
            let mut acc = 0.0;
            for py in y0.floor() as usize..(y1.ceil() as usize).min(mask.height) {
                let oy = (y1.min(py as f64 + 1.0) - y0.max(py as f64)).max(0.0);
                for px in x0.floor() as usize..(x1.ceil() as usize).min(mask.width) {
                    let ox = (x1.min(px as f64 + 1.0) - x0.max(px as f64)).max(0.0);
                    acc += ox * oy * mask.get(px, py);
                }
            }
            data.push((acc / (sx * sy)).clamp(0.0, 1.0));
        }
    }
    LatentMask { height, width, data }
}

/// Maps images to latents and back.
pub trait LatentCodec: Send + Sync {
    /// `(channels, height, width)` of the latent for an image size.
    fn latent_shape(&self, width: usize, height: usize) -> (usize, usize, usize);
    fn encode(&self, image: &ImageBuffer) -> Latent;
    fn decode(&self, latent: &Latent, width: usize, height: usize) -> Result<ImageBuffer>;
}

/// Pixels are the latent.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCodec;

impl LatentCodec for IdentityCodec {
    fn latent_shape(&self, width: usize, height: usize) -> (usize, usize, usize) {
        (3, height, width)
    }

    fn encode(&self, image: &ImageBuffer) -> Latent {
        let (w, h) = image.dims();
        let mut data = vec![0.0; 3 * w * h];
        for p in 0..w * h {
            for c in 0..3 {
                data[c * w * h + p] = image.data[p * 3 + c];
            }
        }
        Latent {
            channels: 3,
            height: h,
            width: w,
            data,
        }
    }

    fn decode(&self, latent: &Latent, width: usize, height: usize) -> Result<ImageBuffer> {
        let expected = self.latent_shape(width, height);
        if latent.shape() != expected {
            return Err(Error::LatentShape {
                expected,
                found: latent.shape(),
            });
        }
        let n = width * height;
        let mut img = ImageBuffer::new(width, height);
        for p in 0..n {
            for c in 0..3 {
                img.data[p * 3 + c] = latent.data[c * n + p].clamp(0.0, 1.0);
            }
        }
        Ok(img)
    }
}

/// Lossy codec: `factor × factor` average pooling, nearest-neighbour decode.
#[derive(Debug, Clone, Copy)]
pub struct PoolCodec {
    pub factor: usize,
}

impl LatentCodec for PoolCodec {
    fn latent_shape(&self, width: usize, height: usize) -> (usize, usize, usize) {
        (3, height.div_ceil(self.factor), width.div_ceil(self.factor))
    }

    fn encode(&self, image: &ImageBuffer) -> Latent {
        let (w, h) = image.dims();
        let (_, lh, lw) = self.latent_shape(w, h);
        let f = self.factor;
        let mut out = Latent::filled(3, lh, lw, 0.0);
        for ly in 0..lh {
            for lx in 0..lw {
                let mut acc = [0.0; 3];
                let mut n = 0.0;
                for y in ly * f..((ly + 1) * f).min(h) {
                    for x in lx * f..((lx + 1) * f).min(w) {
                        let p = image.pixel(x, y);
                        for c in 0..3 {
                            acc[c] += p[c];
                        }
                        n += 1.0;
                    }
                }
                for c in 0..3 {
                    out.data[(c * lh + ly) * lw + lx] = acc[c] / n;
                }
            }
        }
        out
    }

    fn decode(&self, latent: &Latent, width: usize, height: usize) -> Result<ImageBuffer> {
        let expected = self.latent_shape(width, height);
        if latent.shape() != expected {
            return Err(Error::LatentShape {
                expected,
                found: latent.shape(),
            });
        }
        let (_, lh, lw) = expected;
        let mut img = ImageBuffer::new(width, height);
        for y in 0..height {
            for x in 0..width {
                let (ly, lx) = (y / self.factor, x / self.factor);
                let rgb: [f64; 3] = std::array::from_fn(|c| latent.data[(c * lh + ly) * lw + lx].clamp(0.0, 1.0));
                img.set_pixel(x, y, rgb);
            }
        }
        Ok(img)
    }
}
