//! Training-time augmentation of (past, full) state pairs.
//!
//! One geometric transform (rotation, translation, smooth warp) is sampled per
//! call and applied to every channel of both states. Masks use nearest
//! neighbour lookups; road and intensity use bilinear interpolation over the
//! observed neighbours only, so unobserved cells never bleed their 0.5 prior
//! into observed ones. Cells that map from outside the grid become unobserved.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::bevgrid::{StateTensor, CH_INTENSITY, CH_MASK, CH_ROAD};
use crate::error::{Error, Result};
use crate::field::smooth_field;
use crate::rng::{rng_for, stream, Rng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Photometric {
    pub sharpen_prob: f64,
    pub blur_prob: f64,
    /// Intensity multiplier range.
    pub scale_range: (f64, f64),
}

impl Default for Photometric {
    fn default() -> Self {
        Photometric {
            sharpen_prob: 0.2,
            blur_prob: 0.2,
            scale_range: (0.8, 1.2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSpec {
    /// Degrees; rotation is uniform in `[-max, max]`.
    pub max_rotation: f64,
    /// Cells, per axis.
    pub max_translation: f64,
    /// Cells; peak displacement of the warp field.
    pub warp_amplitude: f64,
    pub photometric: Photometric,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            max_rotation: 180.0,
            max_translation: 8.0,
            warp_amplitude: 1.5,
            photometric: Photometric::default(),
            seed: 0,
        }
    }
}

impl AugmentSpec {
    /// No geometric or photometric change at all.
    pub fn identity() -> Self {
        AugmentSpec {
            max_rotation: 0.0,
            max_translation: 0.0,
            warp_amplitude: 0.0,
            photometric: Photometric {
                sharpen_prob: 0.0,
                blur_prob: 0.0,
                scale_range: (1.0, 1.0),
            },
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.photometric;
        for (name, v) in [("sharpen_prob", p.sharpen_prob), ("blur_prob", p.blur_prob)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        let (lo, hi) = p.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::config(format!(
                "scale_range ({lo}, {hi}) is not a positive interval"
            )));
        }
        for (name, v) in [
            ("max_rotation", self.max_rotation),
            ("max_translation", self.max_translation),
            ("warp_amplitude", self.warp_amplitude),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} = {v} must be finite and nonnegative")));
            }
        }
        Ok(())
    }
}

/// A sampled geometric transform over an `n×n` grid. Output cell `p` (in cells
/// relative to the grid centre) reads input location `R⁻¹(p − t) + warp(p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricTransform {
    pub rotation_deg: f64,
    pub translation: [f64; 2],
    /// Per-output-cell displacement in cells, `[dx, dy]`; empty for none.
    pub warp: Vec<[f64; 2]>,
}

impl GeometricTransform {
    pub fn rotation(deg: f64) -> Self {
        GeometricTransform {
            rotation_deg: deg,
            translation: [0.0, 0.0],
            warp: Vec::new(),
        }
    }

    fn source(&self, n: usize, k: usize) -> [f64; 2] {
        let c = n as f64 / 2.0;
        let (i, j) = (k / n, k % n);
        let (px, py) = (
            j as f64 + 0.5 - c - self.translation[0],
            i as f64 + 0.5 - c - self.translation[1],
        );
        let (s, co) = (-self.rotation_deg.to_radians()).sin_cos();
        let (mut x, mut y) = (co * px - s * py, s * px + co * py);
        if let Some(d) = self.warp.get(k) {
            x += d[0];
            y += d[1];
        }
        // back to continuous cell coordinates where centre of cell j is j + 0.5
        [x + c, y + c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PhotometricDraw {
    sharpen: bool,
    blur: bool,
    scale: f64,
}

fn sample_transform(spec: &AugmentSpec, n: usize, rng: &mut Rng) -> GeometricTransform {
    let sym = |rng: &mut Rng, m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
    let rotation_deg = sym(rng, spec.max_rotation);
    let translation = [sym(rng, spec.max_translation), sym(rng, spec.max_translation)];
    let warp = if spec.warp_amplitude > 0.0 {
        let g = (n / 16).max(2);
        let fx = smooth_field(rng, n, g);
        let fy = smooth_field(rng, n, g);
        let a = spec.warp_amplitude;
        fx.iter()
            .zip(&fy)
            .map(|(&u, &v)| [a * (2.0 * u - 1.0), a * (2.0 * v - 1.0)])
            .collect()
    } else {
        Vec::new()
    };
    GeometricTransform {
        rotation_deg,
        translation,
        warp,
    }
}

fn sample_photometric(p: &Photometric, rng: &mut Rng) -> PhotometricDraw {
    let sharpen = rng.random::<f64>() < p.sharpen_prob;
    let blur = rng.random::<f64>() < p.blur_prob;
    let (lo, hi) = p.scale_range;
    let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    PhotometricDraw { sharpen, blur, scale }
}

/// Resamples every channel of `state` through `tf`.
pub fn apply_geometric<T: Scalar>(state: &StateTensor<T>, tf: &GeometricTransform) -> StateTensor<T> {
    let n = state.size();
    let mut out = state.clone();
    let half = T::lit(0.5);
    for k in 0..n * n {
        let [x, y] = tf.source(n, k);
        let (road, intensity, mask) = sample_cell(state, x, y);
        out.channel_mut(CH_MASK)[k] = if mask { T::one() } else { T::zero() };
        out.channel_mut(CH_ROAD)[k] = if mask { road.max(T::zero()).min(T::one()) } else { half };
        out.channel_mut(CH_INTENSITY)[k] = if mask {
            intensity.max(T::zero()).min(T::one())
        } else {
            T::zero()
        };
    }
    out
}

/// Mask by nearest neighbour, values by bilinear weights over observed corners.
fn sample_cell<T: Scalar>(state: &StateTensor<T>, x: f64, y: f64) -> (T, T, bool) {
    let n = state.size();
    let inside = |v: f64| v >= 0.0 && v < n as f64;
    if !(inside(x) && inside(y)) {
        return (T::zero(), T::zero(), false);
    }
    let nearest = (y.floor() as usize) * n + x.floor() as usize;
    if !state.observed(nearest) {
        return (T::zero(), T::zero(), false);
    }
    let (fx, fy) = (x - 0.5, y - 0.5);
    let (x0, y0) = (fx.floor(), fy.floor());
    let (tx, ty) = (fx - x0, fy - y0);
    let (mut road, mut inten, mut wsum) = (0.0, 0.0, 0.0);
    for (dy, wy) in [(0.0, 1.0 - ty), (1.0, ty)] {
        for (dx, wx) in [(0.0, 1.0 - tx), (1.0, tx)] {
            let (cx, cy) = (x0 + dx, y0 + dy);
            if cx < 0.0 || cy < 0.0 || cx >= n as f64 || cy >= n as f64 {
                continue;
            }
            let c = cy as usize * n + cx as usize;
            let w = wx * wy;
            if w > 0.0 && state.observed(c) {
                road += w * state.road()[c].as_f64();
                inten += w * state.intensity()[c].as_f64();
                wsum += w;
            }
        }
    }
    if wsum > 0.0 {
        (T::lit(road / wsum), T::lit(inten / wsum), true)
    } else {
        (state.road()[nearest], state.intensity()[nearest], true)
    }
}

fn box_blur(v: &[f64], n: usize, mask: &[bool]) -> Vec<f64> {
    let mut out = v.to_vec();
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            if !mask[k] {
                continue;
            }
            let (mut s, mut c) = (0.0, 0.0);
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (a, b) = (i as i64 + di, j as i64 + dj);
                    if a >= 0 && b >= 0 && (a as usize) < n && (b as usize) < n {
                        let m = a as usize * n + b as usize;
                        if mask[m] {
                            s += v[m];
                            c += 1.0;
                        }
                    }
                }
            }
            out[k] = s / c;
        }
    }
    out
}

fn apply_photometric<T: Scalar>(state: &mut StateTensor<T>, draw: PhotometricDraw) {
    let n = state.size();
    let mask: Vec<bool> = (0..n * n).map(|k| state.observed(k)).collect();
    let mut v: Vec<f64> = state.intensity().iter().map(|x| x.as_f64()).collect();
    if draw.sharpen {
        let b = box_blur(&v, n, &mask);
        v = v.iter().zip(&b).map(|(x, bl)| x + (x - bl)).collect();
    }
    if draw.blur {
        v = box_blur(&v, n, &mask);
    }
    for (k, out) in state.channel_mut(CH_INTENSITY).iter_mut().enumerate() {
        *out = if mask[k] {
            T::lit((v[k] * draw.scale).clamp(0.0, 1.0))
        } else {
            T::zero()
        };
    }
}

/// Applies one sampled transform identically to both states.
pub fn augment_pair<T: Scalar>(
    x_past: &StateTensor<T>,
    x_full: &StateTensor<T>,
    spec: &AugmentSpec,
) -> Result<(StateTensor<T>, StateTensor<T>)> {
    spec.validate()?;
    if x_past.data.shape() != x_full.data.shape() {
        return Err(Error::domain(format!(
            "augment_pair: geometry mismatch {:?} vs {:?}",
            x_past.data.shape(),
            x_full.data.shape()
        )));
    }
    let mut rng = rng_for(spec.seed, stream::AUGMENT);
    let tf = sample_transform(spec, x_past.size(), &mut rng);
    let draw = sample_photometric(&spec.photometric, &mut rng);
    let identity = tf.rotation_deg == 0.0 && tf.translation == [0.0, 0.0] && tf.warp.is_empty();
    let mut out = [x_past.clone(), x_full.clone()];
    for s in &mut out {
        if !identity {
            *s = apply_geometric(s, &tf);
        }
        if draw.sharpen || draw.blur || draw.scale != 1.0 {
            apply_photometric(s, draw);
        }
    }
    let [p, f] = out;
    Ok((p, f))
}
