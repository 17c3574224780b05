//! Correlative initial alignment of semantic clouds.
//!
//! Target points are splatted into one blurred density map per class; each
//! hypothesis on a rotation/translation lattice is scored by the density of
//! the matching class under the moved source points. Blurring makes the score
//! smooth at the scale of the lattice, so the best hypothesis lands inside
//! the basin where point-to-point ICP converges.

use serde::{Deserialize, Serialize};

use super::Transform2;
use crate::sensim::SemanticPointCloud;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoarseSearch {
    pub max_translation: f64,
    pub translation_step: f64,
    pub max_rotation_deg: f64,
    pub rotation_step_deg: f64,
    /// Gaussian blur of the target density maps (meters).
    pub sigma: f64,
    /// Source points scored per hypothesis (evenly strided subset).
    pub max_points: usize,
}

impl Default for CoarseSearch {
    fn default() -> Self {
        CoarseSearch {
            max_translation: 1.5,
            translation_step: 0.25,
            max_rotation_deg: 5.0,
            rotation_step_deg: 1.0,
            sigma: 0.5,
            max_points: 256,
        }
    }
}

const RES: f64 = 0.25;

struct DensityMaps {
    origin: [f64; 2],
    w: usize,
    h: usize,
    maps: [Vec<f64>; 2],
}

impl DensityMaps {
    fn build(cloud: &SemanticPointCloud, margin: f64, sigma: f64) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &cloud.points {
            for (k, v) in [p.x, p.y].into_iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        let origin = [lo[0] - margin, lo[1] - margin];
        let w = ((hi[0] - lo[0] + 2.0 * margin) / RES).ceil() as usize + 1;
        let h = ((hi[1] - lo[1] + 2.0 * margin) / RES).ceil() as usize + 1;
        let mut maps = [vec![0.0; w * h], vec![0.0; w * h]];
        for p in &cloud.points {
            let c = usize::from(!p.is_road());
            let (fx, fy) = ((p.x - origin[0]) / RES, (p.y - origin[1]) / RES);
            let (j, i) = (fx.round() as usize, fy.round() as usize);
            if i < h && j < w {
                maps[c][i * w + j] += 1.0;
            }
        }
        let kernel = gaussian_kernel(sigma / RES);
        for m in &mut maps {
            blur(m, w, h, &kernel);
        }
        DensityMaps { origin, w, h, maps }
    }

    fn sample(&self, class: usize, p: [f64; 2]) -> f64 {
        let fx = (p[0] - self.origin[0]) / RES;
        let fy = (p[1] - self.origin[1]) / RES;
        if !(fx >= 0.0 && fy >= 0.0) {
            return 0.0;
        }
        let (j, i) = (fx as usize, fy as usize);
        if j + 1 >= self.w || i + 1 >= self.h {
            return 0.0;
        }
        let (tx, ty) = (fx - j as f64, fy - i as f64);
        let m = &self.maps[class];
        let at = |a: usize, b: usize| m[a * self.w + b];
        let top = at(i, j) * (1.0 - tx) + at(i, j + 1) * tx;
        let bot = at(i + 1, j) * (1.0 - tx) + at(i + 1, j + 1) * tx;
        top * (1.0 - ty) + bot * ty
    }
}

fn gaussian_kernel(sigma_cells: f64) -> Vec<f64> {
    let r = (3.0 * sigma_cells).ceil() as i64;
    let k: Vec<f64> = (-r..=r)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma_cells * sigma_cells)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn blur(m: &mut [f64], w: usize, h: usize, k: &[f64]) {
    let r = (k.len() / 2) as i64;
    let mut tmp = vec![0.0; w * h];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let jj = j as i64 + t as i64 - r;
                if jj >= 0 && (jj as usize) < w {
                    acc += kv * m[i * w + jj as usize];
                }
            }
            tmp[i * w + j] = acc;
        }
    }
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let ii = i as i64 + t as i64 - r;
                if ii >= 0 && (ii as usize) < h {
                    acc += kv * tmp[ii as usize * w + j];
                }
            }
            m[i * w + j] = acc;
        }
    }
}

fn lattice(max: f64, step: f64) -> Vec<f64> {
    let n = (max / step).round() as i64;
    (-n..=n).map(|k| k as f64 * step).collect()
}

/// Best hypothesis on the search lattice; ties keep the one closest to identity.
pub fn coarse_align(
    source: &SemanticPointCloud,
    target: &SemanticPointCloud,
    search: &CoarseSearch,
) -> Transform2<f64> {
    let maps = DensityMaps::build(target, search.max_translation + 3.0 * search.sigma, search.sigma);
    let stride = source.len().div_ceil(search.max_points.max(1)).max(1);
    let pts: Vec<(usize, [f64; 2])> = source
        .points
        .iter()
        .step_by(stride)
        .map(|p| (usize::from(!p.is_road()), p.xy()))
        .collect();
    let shifts = lattice(search.max_translation, search.translation_step);
    let mut best = (f64::NEG_INFINITY, f64::INFINITY, Transform2::identity());
    for rot in lattice(search.max_rotation_deg, search.rotation_step_deg) {
        let r = Transform2::rotation_only(rot.to_radians());
        let rotated: Vec<(usize, [f64; 2])> = pts.iter().map(|&(c, p)| (c, r.apply(p))).collect();
        for &tx in &shifts {
            for &ty in &shifts {
                let score: f64 = rotated
                    .iter()
                    .map(|&(c, p)| maps.sample(c, [p[0] + tx, p[1] + ty]))
                    .sum();
                let dist = tx * tx + ty * ty + rot * rot * 1e-3;
                if score > best.0 || (score == best.0 && dist < best.1) {
                    best = (score, dist, Transform2::new(rot.to_radians(), tx, ty));
                }
            }
        }
    }
    best.2
}
