//! Float image, mask and scalar-map buffers plus their 8/16-bit PNG boundary.

use std::path::Path;

use crate::error::{Error, Result};

/// Row-major RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        let img = Self { width, height, data };
        img.validate()?;
        Ok(img)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.width * self.height * 3 {
            return Err(Error::InvalidImage(format!(
                "{}x{} image holds {} values",
                self.width,
                self.height,
                self.data.len()
            )));
        }
        if let Some(v) = self.data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::InvalidImage(format!("value {v} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> ImageBuffer {
        let mut out = ImageBuffer::new(w, h);
        for y in 0..h {
            for x in 0..w {
                out.set_pixel(x, y, self.pixel(x0 + x, y0 + y));
            }
        }
        out
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::UnreadableImage {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            data,
        })
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize_u8(v)).collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .ok_or_else(|| Error::InvalidImage("buffer size".into()))?;
        buf.save(path).map_err(|source| Error::UnreadableImage {
            path: path.to_path_buf(),
            source,
        })
    }

    /// 8-bit RGB PNG bytes.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        encode_png(self.width, self.height, image::ExtendedColorType::Rgb8, &self.to_rgb8())
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let img = decode_png(bytes)?.to_rgb8();
        let (w, h) = img.dimensions();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            data: img.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect(),
        })
    }

    /// Re-quantises to 8 bits, as a PNG round trip would.
    pub fn quantized(&self) -> ImageBuffer {
        ImageBuffer {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f64::from(quantize_u8(v)) / 255.0).collect(),
        }
    }
}

/// Single-channel map with values in `[0, 1]`. Input masks use 1 for the
/// region to remove.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl MaskMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{width}x{height} mask holds {} values",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::InvalidImage(format!("mask value {v} outside [0, 1]")));
        }
        Ok(Self { width, height, data })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// `1 - m` per pixel; the loss weight derived from a fused mask.
    pub fn complement(&self) -> MaskMap {
        MaskMap {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| 1.0 - v).collect(),
        }
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::UnreadableImage {
                path: path.to_path_buf(),
                source,
            })?
            .to_luma8();
        let (w, h) = img.dimensions();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            data: img.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect(),
        })
    }

    /// Stores `round(255 * m)` as 8-bit grayscale.
    pub fn to_luma8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize_u8(v)).collect()
    }

    /// 8-bit grayscale PNG bytes.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        encode_png(self.width, self.height, image::ExtendedColorType::L8, &self.to_luma8())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.to_luma8())
            .ok_or_else(|| Error::InvalidImage("buffer size".into()))?;
        buf.save(path).map_err(|source| Error::UnreadableImage {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Unconstrained single-channel float map (depth, alpha, raw scores).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ScalarMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Depth in metres written as 16-bit millimetres, saturating.
    pub fn save_png16_millimeters(&self, path: &Path) -> Result<()> {
        let raw: Vec<u16> = self
            .data
            .iter()
            .map(|&d| (d * 1000.0).round().clamp(0.0, f64::from(u16::MAX)) as u16)
            .collect();
        let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(self.width as u32, self.height as u32, raw)
            .ok_or_else(|| Error::InvalidImage("buffer size".into()))?;
        buf.save(path).map_err(|source| Error::UnreadableImage {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Little-endian dump: `u32 width, u32 height, f32 * (w*h)`.
    pub fn write_f32_binary(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(8 + self.data.len() * 4);
        bytes.extend_from_slice(&(self.width as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.height as u32).to_le_bytes());
        for &v in &self.data {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

impl From<&MaskMap> for ScalarMap {
    fn from(m: &MaskMap) -> Self {
        ScalarMap {
            width: m.width,
            height: m.height,
            data: m.data.clone(),
        }
    }
}

#[inline]
pub(crate) fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_png(width: usize, height: usize, color: image::ExtendedColorType, raw: &[u8]) -> Result<Vec<u8>> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(raw, width as u32, height as u32, color)
        .map_err(|e| Error::InvalidImage(e.to_string()))?;
    Ok(out)
}

fn decode_png(bytes: &[u8]) -> Result<image::DynamicImage> {
    image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(|e| Error::InvalidImage(format!("undecodable png: {e}")))
}
