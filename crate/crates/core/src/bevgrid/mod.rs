//! Probabilistic bird's-eye-view grids and model-input state tensors.
//!
//! Grids are centred on the agent: x (forward) runs along columns and y
//! (left) along rows, with row 0 at `y = -extent/2`.

pub mod pwg;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::register::{AccumulatedCloud, IcpOptions, RigidTransform2D};
use crate::scalar::Scalar;
use crate::sensim::{SemanticPoint, SemanticPointCloud};
use crate::synthworld::grid_dim;
use crate::tensornet::Tensor;

use pwg::{channel, PwgData};

pub const ALPHA0: f64 = 1.0;
pub const BETA0: f64 = 1.0;
/// Channels of a [`StateTensor`].
pub const CH_ROAD: usize = 0;
pub const CH_INTENSITY: usize = 1;
pub const CH_MASK: usize = 2;
pub const STATE_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub extent_m: f64,
    pub cell_m: f64,
}

impl Default for GridGeometry {
    fn default() -> Self {
        GridGeometry {
            extent_m: 32.0,
            cell_m: 0.5,
        }
    }
}

impl GridGeometry {
    pub fn dim(&self) -> Result<usize> {
        grid_dim(self.extent_m, self.cell_m)
    }

    /// Cell index of an agent-frame point, `None` outside the extent.
    pub fn cell_of(&self, n: usize, x: f64, y: f64) -> Option<usize> {
        let half = self.extent_m / 2.0;
        let (fx, fy) = ((x + half) / self.cell_m, (y + half) / self.cell_m);
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let (j, i) = (fx.floor() as usize, fy.floor() as usize);
        (i < n && j < n).then_some(i * n + j)
    }

    /// Agent-frame centre of a cell.
    pub fn cell_center(&self, n: usize, idx: usize) -> [f64; 2] {
        let half = self.extent_m / 2.0;
        let (i, j) = (idx / n, idx % n);
        [
            (j as f64 + 0.5) * self.cell_m - half,
            (i as f64 + 0.5) * self.cell_m - half,
        ]
    }
}

/// Per-cell Beta road counts and Welford intensity statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilisticGrid<T> {
    pub geometry: GridGeometry,
    pub size: usize,
    pub road_alpha: Vec<T>,
    pub road_beta: Vec<T>,
    pub intensity_mean: Vec<T>,
    pub intensity_m2: Vec<T>,
    pub obs_count: Vec<T>,
    pub observed_mask: Vec<T>,
}

impl<T: Scalar> ProbabilisticGrid<T> {
    pub fn new(geometry: GridGeometry) -> Result<Self> {
        let size = geometry.dim()?;
        let cells = size * size;
        Ok(ProbabilisticGrid {
            geometry,
            size,
            road_alpha: vec![T::lit(ALPHA0); cells],
            road_beta: vec![T::lit(BETA0); cells],
            intensity_mean: vec![T::zero(); cells],
            intensity_m2: vec![T::zero(); cells],
            obs_count: vec![T::zero(); cells],
            observed_mask: vec![T::zero(); cells],
        })
    }

    pub fn cells(&self) -> usize {
        self.size * self.size
    }

    /// Number of road observations in a cell.
    pub fn road_count(&self, k: usize) -> T {
        self.road_alpha[k] - T::lit(ALPHA0)
    }

    pub fn posterior_mean(&self, k: usize) -> T {
        self.road_alpha[k] / (self.road_alpha[k] + self.road_beta[k])
    }

    pub fn insert(&mut self, p: &SemanticPoint) {
        let Some(k) = self.geometry.cell_of(self.size, p.x, p.y) else {
            return;
        };
        self.obs_count[k] += T::one();
        self.observed_mask[k] = T::one();
        if p.is_road() {
            self.road_alpha[k] += T::one();
            let v = T::lit(p.intensity);
            let n = self.road_count(k);
            let delta = v - self.intensity_mean[k];
            self.intensity_mean[k] += delta / n;
            self.intensity_m2[k] += delta * (v - self.intensity_mean[k]);
        } else {
            self.road_beta[k] += T::one();
        }
    }

    pub fn insert_all<'a>(&mut self, points: impl IntoIterator<Item = &'a SemanticPoint>) {
        for p in points {
            self.insert(p);
        }
    }

    /// Combines another grid's observations (Chan et al. pairwise update):
    /// `n = na + nb`, `δ = mb − ma`, `mean = ma + δ·nb/n`,
    /// `M2 = M2a + M2b + δ²·na·nb/n`.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if self.geometry != other.geometry {
            return Err(Error::domain("cannot merge grids with different geometry"));
        }
        for k in 0..self.cells() {
            let (na, nb) = (self.road_count(k), other.road_count(k));
            let n = na + nb;
            if nb > T::zero() {
                let delta = other.intensity_mean[k] - self.intensity_mean[k];
                self.intensity_mean[k] += delta * nb / n;
                self.intensity_m2[k] += other.intensity_m2[k] + delta * delta * na * nb / n;
            }
            self.road_alpha[k] += other.road_count(k);
            self.road_beta[k] += other.road_beta[k] - T::lit(BETA0);
            self.obs_count[k] += other.obs_count[k];
            if self.obs_count[k] > T::zero() {
                self.observed_mask[k] = T::one();
            }
        }
        Ok(())
    }

    pub fn to_pwg(&self) -> PwgData {
        let f = |v: &[T]| v.iter().map(|x| x.as_f32()).collect::<Vec<f32>>();
        PwgData {
            height: self.size,
            width: self.size,
            channels: vec![
                (channel::ROAD_ALPHA, f(&self.road_alpha)),
                (channel::ROAD_BETA, f(&self.road_beta)),
                (channel::INTENSITY_MEAN, f(&self.intensity_mean)),
                (channel::INTENSITY_M2, f(&self.intensity_m2)),
                (channel::OBS_COUNT, f(&self.obs_count)),
                (channel::OBSERVED_MASK, f(&self.observed_mask)),
            ],
        }
    }

    /// Rebuilds a grid from PWG data holding channels 0–5.
    pub fn from_pwg(data: &PwgData, geometry: GridGeometry) -> Result<Self> {
        let mut grid = Self::new(geometry)?;
        if data.height != grid.size || data.width != grid.size {
            return Err(Error::format(format!(
                "PWG grid is {}x{}, geometry implies {n}x{n}",
                data.height,
                data.width,
                n = grid.size
            )));
        }
        let g = |id| -> Result<Vec<T>> { Ok(data.channel(id)?.iter().map(|&v| T::lit(v as f64)).collect()) };
        grid.road_alpha = g(channel::ROAD_ALPHA)?;
        grid.road_beta = g(channel::ROAD_BETA)?;
        grid.intensity_mean = g(channel::INTENSITY_MEAN)?;
        grid.intensity_m2 = g(channel::INTENSITY_M2)?;
        grid.obs_count = g(channel::OBS_COUNT)?;
        grid.observed_mask = g(channel::OBSERVED_MASK)?;
        Ok(grid)
    }

    pub fn save_pwg(&self, path: &Path) -> Result<()> {
        self.to_pwg().save(path)
    }
}

/// Projects agent-frame points into a fresh grid.
pub fn project<'a, T: Scalar>(
    points: impl IntoIterator<Item = &'a SemanticPoint>,
    geometry: GridGeometry,
) -> Result<ProbabilisticGrid<T>> {
    let mut grid = ProbabilisticGrid::new(geometry)?;
    grid.insert_all(points);
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Past,
    Full,
    PseudoFull,
    Predicted,
}

/// `[road mean, intensity mean, mask]` × H × W model input.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTensor<T> {
    pub data: Tensor<T>,
    pub role: Role,
}

impl<T: Scalar> StateTensor<T> {
    /// Builds a state from channel planes, checking shape.
    pub fn from_tensor(data: Tensor<T>, role: Role) -> Result<Self> {
        let s = data.shape();
        if s.len() != 3 || s[0] != STATE_CHANNELS || s[1] != s[2] {
            return Err(Error::domain(format!("state tensors are [3, n, n], got {s:?}")));
        }
        Ok(StateTensor { data, role })
    }

    pub fn size(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn cells(&self) -> usize {
        self.size() * self.size()
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.cells();
        &self.data.data()[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.cells();
        &mut self.data.data_mut()[c * n..(c + 1) * n]
    }

    pub fn road(&self) -> &[T] {
        self.channel(CH_ROAD)
    }

    pub fn intensity(&self) -> &[T] {
        self.channel(CH_INTENSITY)
    }

    pub fn mask(&self) -> &[T] {
        self.channel(CH_MASK)
    }

    pub fn observed(&self, k: usize) -> bool {
        self.mask()[k] > T::lit(0.5)
    }

    pub fn observed_count(&self) -> usize {
        (0..self.cells()).filter(|&k| self.observed(k)).count()
    }

    /// Checks finiteness, a binary mask, and road = 0.5 where unobserved.
    pub fn validate(&self) -> Result<()> {
        if !self.data.all_finite() {
            return Err(Error::domain("state tensor has non-finite values"));
        }
        let half = T::lit(0.5);
        for k in 0..self.cells() {
            let m = self.mask()[k];
            if m != T::zero() && m != T::one() {
                return Err(Error::domain(format!("mask value {m} at cell {k} is not binary")));
            }
            if m == T::zero() && self.road()[k] != half {
                return Err(Error::domain(format!(
                    "unobserved cell {k} has road value {}",
                    self.road()[k]
                )));
            }
        }
        Ok(())
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn cast<U: Scalar>(&self) -> StateTensor<U> {
        StateTensor {
            data: self.data.cast(),
            role: self.role,
        }
    }

    pub fn to_pwg(&self) -> PwgData {
        let f = |c| self.channel(c).iter().map(|x| x.as_f32()).collect::<Vec<f32>>();
        PwgData {
            height: self.size(),
            width: self.size(),
            channels: vec![
                (channel::ROAD_MEAN, f(CH_ROAD)),
                (channel::INTENSITY_MEAN, f(CH_INTENSITY)),
                (channel::OBSERVED_MASK, f(CH_MASK)),
            ],
        }
    }

    pub fn from_pwg(data: &PwgData, role: Role) -> Result<Self> {
        if data.height != data.width {
            return Err(Error::format("state grids must be square"));
        }
        let mut values = Vec::with_capacity(3 * data.height * data.width);
        for id in [channel::ROAD_MEAN, channel::INTENSITY_MEAN, channel::OBSERVED_MASK] {
            values.extend(data.channel(id)?.iter().map(|&v| T::lit(v as f64)));
        }
        Self::from_tensor(Tensor::from_vec(&[3, data.height, data.width], values)?, role)
    }

    /// Road channel as an image (north up), for quick inspection.
    pub fn render_road(&self) -> crate::pnm::Image {
        let v: Vec<f64> = self.road().iter().map(|x| x.as_f64()).collect();
        crate::pnm::gray_from_grid(self.size(), &v)
    }
}

/// Assembles the model-input tensor of a grid.
pub fn to_tensor<T: Scalar>(grid: &ProbabilisticGrid<T>, role: Role) -> StateTensor<T> {
    let cells = grid.cells();
    let mut data = Vec::with_capacity(3 * cells);
    data.extend((0..cells).map(|k| grid.posterior_mean(k)));
    data.extend((0..cells).map(|k| {
        if grid.road_count(k) > T::zero() {
            grid.intensity_mean[k]
        } else {
            T::zero()
        }
    }));
    data.extend_from_slice(&grid.observed_mask);
    StateTensor {
        data: Tensor::from_vec(&[3, grid.size, grid.size], data).expect("grid shape"),
        role,
    }
}

/// Past and full grids of one traversal, both in the frame of the split step.
#[derive(Debug, Clone)]
pub struct PastFull<T> {
    pub past_grid: ProbabilisticGrid<T>,
    pub full_grid: ProbabilisticGrid<T>,
    /// Step transforms between consecutive nonempty sweeps.
    pub trajectory: Vec<RigidTransform2D>,
}

impl<T: Scalar> PastFull<T> {
    pub fn past(&self) -> StateTensor<T> {
        to_tensor(&self.past_grid, Role::Past)
    }

    pub fn full(&self) -> StateTensor<T> {
        to_tensor(&self.full_grid, Role::Full)
    }

    pub fn mask_full(&self) -> &[T] {
        &self.full_grid.observed_mask
    }
}

/// Splits a traversal at step `t` (1-based): the past state fuses sweeps
/// `1..=t`, the full state all sweeps, both in the frame of sweep `t`.
/// Sweeps with fewer than three points carry no registrable information
/// and are skipped.
pub fn split_past_full<T: Scalar>(
    sweeps: &[SemanticPointCloud],
    t: usize,
    geometry: GridGeometry,
    icp: &IcpOptions,
) -> Result<PastFull<T>> {
    if t == 0 || t >= sweeps.len() {
        return Err(Error::domain(format!("split step {t} outside [1, {})", sweeps.len())));
    }
    if sweeps[t - 1].len() < 3 {
        return Err(Error::domain(format!("sweep {t} at the split step is empty")));
    }
    let usable = |s: &&SemanticPointCloud| s.len() >= 3;
    let mut acc = AccumulatedCloud::new();
    for s in sweeps[..t].iter().filter(usable) {
        acc.push(s, icp)?;
    }
    let past_grid = project::<T>(&acc.points.points, geometry)?;
    let mut full_grid = past_grid.clone();
    let mut trajectory = acc.trajectory.clone();
    // Future sweeps are brought back through the inverse of the chained motion.
    let mut to_future = RigidTransform2D::identity();
    let mut prev = &sweeps[t - 1];
    for s in sweeps[t..].iter().filter(usable) {
        let step = crate::register::icp(prev, s, icp)?.transform;
        trajectory.push(step);
        to_future = step.compose(&to_future);
        let back = to_future.inverse();
        for p in &s.points {
            let [x, y] = back.apply(p.xy());
            full_grid.insert(&SemanticPoint { x, y, ..*p });
        }
        prev = s;
    }
    Ok(PastFull {
        past_grid,
        full_grid,
        trajectory,
    })
}


/// Stacks states into a `[B, 3, n, n]` batch.
pub fn stack_states<T: Scalar>(states: &[&StateTensor<T>]) -> Result<Tensor<T>> {
    let parts: Vec<Tensor<T>> = states.iter().map(|s| s.data.clone()).collect();
    Tensor::stack(&parts)
}

/// One channel of every state as a `[B, 1, n, n]` batch, mapped through `f`.
pub fn channel_batch<T: Scalar>(states: &[&StateTensor<T>], c: usize, f: impl Fn(T) -> T) -> Result<Tensor<T>> {
    let first = states.first().ok_or_else(|| Error::domain("empty state batch"))?;
    let n = first.size();
    let mut data = Vec::with_capacity(states.len() * n * n);
    for s in states {
        if s.size() != n {
            return Err(Error::domain(format!(
                "batch mixes {n}x{n} and {0}x{0} states",
                s.size()
            )));
        }
        data.extend(s.channel(c).iter().map(|&v| f(v)));
    }
    Tensor::from_vec(&[states.len(), 1, n, n], data)
}
