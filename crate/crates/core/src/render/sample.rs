use crate::scene::{ImageBuffer, ScalarMap};

/// Bilinear weights and clamped corner coordinates for a continuous pixel
/// position (pixel centres at integers).
#[inline]
fn corners(width: usize, height: usize, u: f64, v: f64) -> ([usize; 2], [usize; 2], f64, f64) {
    let u = u.clamp(0.0, (width - 1) as f64);
    let v = v.clamp(0.0, (height - 1) as f64);
    let x0 = u.floor() as usize;
    let y0 = v.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    ([x0, x1], [y0, y1], u - x0 as f64, v - y0 as f64)
}

/// Bilinear RGB sample with edge clamping.
pub fn sample_bilinear(image: &ImageBuffer, uv: [f64; 2]) -> [f64; 3] {
    let ([x0, x1], [y0, y1], fx, fy) = corners(image.width, image.height, uv[0], uv[1]);
    let (a, b, c, d) = (image.pixel(x0, y0), image.pixel(x1, y0), image.pixel(x0, y1), image.pixel(x1, y1));
    let mut out = [0.0; 3];
    for ch in 0..3 {
        let top = a[ch] + (b[ch] - a[ch]) * fx;
        let bottom = c[ch] + (d[ch] - c[ch]) * fx;
        out[ch] = top + (bottom - top) * fy;
    }
    out
}

pub fn sample_bilinear_scalar(map: &ScalarMap, uv: [f64; 2]) -> f64 {
    let ([x0, x1], [y0, y1], fx, fy) = corners(map.width, map.height, uv[0], uv[1]);
    let top = map.get(x0, y0) + (map.get(x1, y0) - map.get(x0, y0)) * fx;
    let bottom = map.get(x0, y1) + (map.get(x1, y1) - map.get(x0, y1)) * fx;
    top + (bottom - top) * fy
}
