//! Gaussian splat cloud, its flat parameter layout, and SfM initialisation.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::camera::quat_to_matrix;
use crate::error::{Error, Result};
use crate::render::sh::SH_C0;

pub const MAX_SH_DEGREE: usize = 3;

/// Number of SH coefficients per colour channel for a degree.
pub const fn sh_coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// One anisotropic 3D Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat {
    pub mean: [f64; 3],
    pub log_scale: [f64; 3],
    /// `[w, x, y, z]`, kept unit length by the optimiser.
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    /// `(degree+1)^2` RGB triples; index 0 is the DC term.
    pub sh: Vec<[f64; 3]>,
}

impl Splat {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> [f64; 3] {
        self.log_scale.map(f64::exp)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(self.rotation)
    }

    /// `R diag(s^2) R^T`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s = self.scale();
        let m = r * Matrix3::from_diagonal(&Vector3::new(s[0], s[1], s[2]));
        m * m.transpose()
    }

    pub fn mean_vec(&self) -> Vector3<f64> {
        Vector3::from(self.mean)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    pub sh_degree: usize,
    pub splats: Vec<Splat>,
}

/// Offsets of each parameter group inside a splat's flat parameter row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub sh_degree: usize,
}

/// Parameter groups with independent learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    Mean,
    Scale,
    Rotation,
    Opacity,
    ShDc,
    ShRest,
}

impl ParamLayout {
    pub const MEAN: usize = 0;
    pub const SCALE: usize = 3;
    pub const ROTATION: usize = 6;
    pub const OPACITY: usize = 10;
    pub const SH: usize = 11;

    pub fn new(sh_degree: usize) -> Self {
        Self { sh_degree }
    }

    pub fn stride(&self) -> usize {
        Self::SH + 3 * sh_coeff_count(self.sh_degree)
    }

    pub fn group_of(&self, offset: usize) -> ParamGroup {
        match offset {
            0..=2 => ParamGroup::Mean,
            3..=5 => ParamGroup::Scale,
            6..=9 => ParamGroup::Rotation,
            10 => ParamGroup::Opacity,
            11..=13 => ParamGroup::ShDc,
            _ => ParamGroup::ShRest,
        }
    }

    pub fn write(&self, splat: &Splat, row: &mut [f64]) {
        row[0..3].copy_from_slice(&splat.mean);
        row[3..6].copy_from_slice(&splat.log_scale);
        row[6..10].copy_from_slice(&splat.rotation);
        row[10] = splat.opacity_logit;
        for (k, c) in splat.sh.iter().enumerate() {
            row[Self::SH + 3 * k..Self::SH + 3 * k + 3].copy_from_slice(c);
        }
    }

    pub fn read(&self, row: &[f64]) -> Splat {
        let n = sh_coeff_count(self.sh_degree);
        Splat {
            mean: [row[0], row[1], row[2]],
            log_scale: [row[3], row[4], row[5]],
            rotation: [row[6], row[7], row[8], row[9]],
            opacity_logit: row[10],
            sh: (0..n)
                .map(|k| {
                    let b = Self::SH + 3 * k;
                    [row[b], row[b + 1], row[b + 2]]
                })
                .collect(),
        }
    }
}

impl GaussianCloud {
    pub fn empty(sh_degree: usize) -> Self {
        Self {
            sh_degree,
            splats: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self.sh_degree)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sh_degree > MAX_SH_DEGREE {
            return Err(Error::InvalidConfig(format!("sh degree {} > {MAX_SH_DEGREE}", self.sh_degree)));
        }
        let n = sh_coeff_count(self.sh_degree);
        for (i, s) in self.splats.iter().enumerate() {
            if s.sh.len() != n {
                return Err(Error::InvalidConfig(format!(
                    "splat {i} has {} sh coefficients, expected {n}",
                    s.sh.len()
                )));
            }
        }
        Ok(())
    }

    /// Flattened parameters, `len() * stride` values.
    pub fn to_params(&self) -> Vec<f64> {
        let layout = self.layout();
        let stride = layout.stride();
        let mut out = vec![0.0; self.len() * stride];
        for (s, row) in self.splats.iter().zip(out.chunks_mut(stride)) {
            layout.write(s, row);
        }
        out
    }

    pub fn from_params(sh_degree: usize, params: &[f64]) -> Self {
        let layout = ParamLayout::new(sh_degree);
        Self {
            sh_degree,
            splats: params.chunks(layout.stride()).map(|r| layout.read(r)).collect(),
        }
    }

    /// Camera-independent scene radius: max distance of a mean from the
    /// centroid.
    pub fn extent(&self) -> f64 {
        if self.splats.is_empty() {
            return 1.0;
        }
        let c = self.splats.iter().map(Splat::mean_vec).sum::<Vector3<f64>>() / self.len() as f64;
        self.splats
            .iter()
            .map(|s| (s.mean_vec() - c).norm())
            .fold(0.0, f64::max)
            .max(1e-6)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// A structure-from-motion point with its colour in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SfmPoint {
    pub position: [f64; 3],
    pub color: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub sh_degree: usize,
    pub initial_opacity: f64,
    /// Lower bound on the nearest-neighbour spacing used for scales.
    pub min_spacing: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            sh_degree: 1,
            initial_opacity: 0.1,
            min_spacing: 1e-4,
        }
    }
}

/// One isotropic splat per point, sized by the mean distance to its three
/// nearest neighbours.
pub fn init_cloud(points: &[SfmPoint], config: &InitConfig) -> Result<GaussianCloud> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if config.sh_degree > MAX_SH_DEGREE {
        return Err(Error::InvalidConfig(format!("sh degree {}", config.sh_degree)));
    }
    let spacing = knn_mean_distance(points, 3);
    let n_coeffs = sh_coeff_count(config.sh_degree);
    let splats = points
        .iter()
        .zip(spacing)
        .map(|(p, d)| {
            let ls = d.max(config.min_spacing).ln();
            let mut sh = vec![[0.0; 3]; n_coeffs];
            sh[0] = p.color.map(|c| (c - 0.5) / SH_C0);
            Splat {
                mean: p.position,
                log_scale: [ls; 3],
                rotation: [1.0, 0.0, 0.0, 0.0],
                opacity_logit: logit(config.initial_opacity),
                sh,
            }
        })
        .collect();
    Ok(GaussianCloud {
        sh_degree: config.sh_degree,
        splats,
    })
}

/// Mean distance to the `k` nearest other points, via a uniform grid.
fn knn_mean_distance(points: &[SfmPoint], k: usize) -> Vec<f64> {
    let n = points.len();
    if n == 1 {
        return vec![0.0];
    }
    let k = k.min(n - 1);
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p.position[a]);
            hi[a] = hi[a].max(p.position[a]);
        }
    }
    let span = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max).max(1e-9);
    // ~2 points per cell on average for a surface-like distribution.
    let cells_per_axis = ((n as f64 / 2.0).sqrt().ceil() as usize).clamp(1, 256);
    let cell = span / cells_per_axis as f64;
    let key = |p: &[f64; 3]| -> [i64; 3] { [0, 1, 2].map(|a| ((p[a] - lo[a]) / cell).floor() as i64) };
    let mut grid: std::collections::HashMap<[i64; 3], Vec<usize>> = std::collections::HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(key(&p.position)).or_default().push(i);
    }
    let dist = |a: &[f64; 3], b: &[f64; 3]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let c = key(&p.position);
            let mut ring = 1i64;
            loop {
                let mut best: Vec<f64> = Vec::new();
                for dx in -ring..=ring {
                    for dy in -ring..=ring {
                        for dz in -ring..=ring {
                            if let Some(ids) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                                best.extend(ids.iter().filter(|&&j| j != i).map(|&j| dist(&p.position, &points[j].position)));
                            }
                        }
                    }
                }
                best.sort_by(f64::total_cmp);
                // Neighbours within `ring * cell` are guaranteed exact.
                let complete = best.len() >= k && best[k - 1] <= ring as f64 * cell;
                if complete || ring as usize > cells_per_axis + 1 {
                    let take = best.len().min(k);
                    return best[..take].iter().sum::<f64>() / take.max(1) as f64;
                }
                ring += 1;
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn single_white_point() {
        let cloud = init_cloud(
            &[SfmPoint {
                position: [0.0; 3],
                color: [1.0; 3],
            }],
            &InitConfig::default(),
        )
        .unwrap();
        assert_eq!(cloud.len(), 1);
        let s = &cloud.splats[0];
        assert_eq!(s.mean, [0.0; 3]);
        for c in s.sh[0] {
            assert_relative_eq!(SH_C0 * c + 0.5, 1.0, epsilon = 1e-12);
        }
        assert_relative_eq!(s.opacity(), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn coincident_points_use_spacing_floor() {
        let p = SfmPoint {
            position: [1.0, 2.0, 3.0],
            color: [0.5; 3],
        };
        let cloud = init_cloud(&[p, p], &InitConfig::default()).unwrap();
        for s in &cloud.splats {
            assert_relative_eq!(s.log_scale[0], 1e-4f64.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn empty_point_set_rejected() {
        assert!(matches!(init_cloud(&[], &InitConfig::default()), Err(Error::EmptyPointSet)));
    }

    #[test]
    fn grid_knn_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<SfmPoint> = (0..300)
            .map(|_| SfmPoint {
                position: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..0.05)],
                color: [0.0; 3],
            })
            .collect();
        let fast = knn_mean_distance(&pts, 3);
        for (i, p) in pts.iter().enumerate() {
            let mut d: Vec<f64> = pts
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| {
                    (0..3).map(|a| (p.position[a] - q.position[a]).powi(2)).sum::<f64>().sqrt()
                })
                .collect();
            d.sort_by(f64::total_cmp);
            assert_relative_eq!(fast[i], (d[0] + d[1] + d[2]) / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn params_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let cloud = GaussianCloud {
            sh_degree: 2,
            splats: (0..4)
                .map(|_| Splat {
                    mean: [rng.random(), rng.random(), rng.random()],
                    log_scale: [rng.random(), rng.random(), rng.random()],
                    rotation: [1.0, 0.0, 0.0, 0.0],
                    opacity_logit: rng.random(),
                    sh: (0..9).map(|_| [rng.random(), rng.random(), rng.random()]).collect(),
                })
                .collect(),
        };
        assert_eq!(GaussianCloud::from_params(2, &cloud.to_params()), cloud);
    }
}
