//! Windowed SSIM with truncated, renormalised Gaussian windows, plus its
//! adjoint for backpropagation.

use crate::error::{Error, Result};
use crate::scene::ImageBuffer;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Per-output-position 1D Gaussian taps, renormalised where the window
/// crosses the border.
#[derive(Debug, Clone)]
struct Taps {
    starts: Vec<usize>,
    weights: Vec<Vec<f64>>,
}

impl Taps {
    fn new(n: usize, window: usize, sigma: f64) -> Self {
        let r = (window / 2) as isize;
        let mut starts = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for p in 0..n as isize {
            let lo = (p - r).max(0);
            let hi = (p + r).min(n as isize - 1);
            let mut w: Vec<f64> = (lo..=hi)
                .map(|q| {
                    let d = (q - p) as f64;
                    (-d * d / (2.0 * sigma * sigma)).exp()
                })
                .collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
            starts.push(lo as usize);
            weights.push(w);
        }
        Taps { starts, weights }
    }
}

/// Separable Gaussian window over a single-channel `width × height` plane.
#[derive(Debug, Clone)]
pub struct GaussianWindow {
    width: usize,
    height: usize,
    tx: Taps,
    ty: Taps,
}

impl GaussianWindow {
    pub fn new(width: usize, height: usize) -> Self {
        Self::with_params(width, height, SSIM_WINDOW, SSIM_SIGMA)
    }

    pub fn with_params(width: usize, height: usize, window: usize, sigma: f64) -> Self {
        GaussianWindow {
            width,
            height,
            tx: Taps::new(width, window, sigma),
            ty: Taps::new(height, window, sigma),
        }
    }

    /// Weighted local mean `F[v]`.
    pub fn apply(&self, plane: &[f64]) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let mut rows = vec![0.0; w * h];
        for y in 0..h {
            let src = &plane[y * w..(y + 1) * w];
            for x in 0..w {
                let s = self.tx.starts[x];
                rows[y * w + x] = self.tx.weights[x].iter().zip(&src[s..]).map(|(k, v)| k * v).sum();
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            let s = self.ty.starts[y];
            for (j, k) in self.ty.weights[y].iter().enumerate() {
                let src = &rows[(s + j) * w..(s + j + 1) * w];
                for (o, v) in out[y * w..(y + 1) * w].iter_mut().zip(src) {
                    *o += k * v;
                }
            }
        }
        out
    }

    /// Adjoint `Fᵀ[g]`.
    pub fn apply_adjoint(&self, plane: &[f64]) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let mut cols = vec![0.0; w * h];
        for y in 0..h {
            let s = self.ty.starts[y];
            let src = &plane[y * w..(y + 1) * w];
            for (j, k) in self.ty.weights[y].iter().enumerate() {
                for (o, v) in cols[(s + j) * w..(s + j + 1) * w].iter_mut().zip(src) {
                    *o += k * v;
                }
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let g = cols[y * w + x];
                let s = self.tx.starts[x];
                for (j, k) in self.tx.weights[x].iter().enumerate() {
                    out[y * w + s + j] += k * g;
                }
            }
        }
        out
    }
}

pub(crate) fn channel(img: &ImageBuffer, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(3).copied().collect()
}

struct ChannelStats {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    s: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
}

fn channel_stats(win: &GaussianWindow, x: &[f64], y: &[f64]) -> ChannelStats {
    let sq = |u: &[f64], v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(p, q)| p * q).collect() };
    let mu_x = win.apply(x);
    let mu_y = win.apply(y);
    let exx = win.apply(&sq(x, x));
    let eyy = win.apply(&sq(y, y));
    let exy = win.apply(&sq(x, y));
    let n = x.len();
    let (mut a, mut b, mut c, mut d, mut s) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for p in 0..n {
        let (mx, my) = (mu_x[p], mu_y[p]);
        let sxx = exx[p] - mx * mx;
        let syy = eyy[p] - my * my;
        let sxy = exy[p] - mx * my;
        a[p] = 2.0 * mx * my + SSIM_C1;
        b[p] = 2.0 * sxy + SSIM_C2;
        c[p] = mx * mx + my * my + SSIM_C1;
        d[p] = sxx + syy + SSIM_C2;
        s[p] = a[p] * b[p] / (c[p] * d[p]);
    }
    ChannelStats { mu_x, mu_y, s, a, b, c, d }
}

fn check_dims(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::dims("ssim operands", a.dims(), b.dims()));
    }
    Ok(())
}

/// Per-pixel SSIM averaged over RGB.
pub fn ssim_map(a: &ImageBuffer, b: &ImageBuffer) -> Result<Vec<f64>> {
    check_dims(a, b)?;
    let win = GaussianWindow::new(a.width, a.height);
    let mut out = vec![0.0; a.width * a.height];
    for ch in 0..3 {
        let st = channel_stats(&win, &channel(a, ch), &channel(b, ch));
        for (o, s) in out.iter_mut().zip(&st.s) {
            *o += s / 3.0;
        }
    }
    Ok(out)
}

/// Mean SSIM over pixels and channels.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    let map = ssim_map(a, b)?;
    Ok(map.iter().sum::<f64>() / map.len() as f64)
}

/// Returns `Σ_p coeff_p · mean_c s_c(p)` and its gradient with respect to
/// every value of `x` (interleaved RGB).
pub(crate) fn weighted_ssim_grad(
    win: &GaussianWindow,
    x: &ImageBuffer,
    y: &ImageBuffer,
    coeff: &[f64],
) -> (f64, Vec<f64>) {
    let n = x.width * x.height;
    let mut value = 0.0;
    let mut grad = vec![0.0; n * 3];
    for ch in 0..3 {
        let xc = channel(x, ch);
        let yc = channel(y, ch);
        let st = channel_stats(win, &xc, &yc);
        let (mut ga, mut gb, mut gc) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for p in 0..n {
            let g = coeff[p] / 3.0;
            if g == 0.0 {
                continue;
            }
            value += g * st.s[p];
            let cd = st.c[p] * st.d[p];
            let (mx, my) = (st.mu_x[p], st.mu_y[p]);
            // partials with respect to mu_x, E[x^2], E[xy]
            ga[p] = g * (2.0 * my * (st.b[p] - st.a[p]) / cd + st.s[p] * 2.0 * mx * (1.0 / st.d[p] - 1.0 / st.c[p]));
            gb[p] = g * (-st.s[p] / st.d[p]);
            gc[p] = g * (2.0 * st.a[p] / cd);
        }
        let fa = win.apply_adjoint(&ga);
        let fb = win.apply_adjoint(&gb);
        let fc = win.apply_adjoint(&gc);
        for p in 0..n {
            grad[p * 3 + ch] = fa[p] + 2.0 * xc[p] * fb[p] + yc[p] * fc[p];
        }
    }
    (value, grad)
}
