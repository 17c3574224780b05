//! Trajectories and simulated lidar-style semantic sweeps.
//!
//! A sweep casts equally spaced rays from the agent and marches along each
//! one, sampling the ground cell under every step. Each cell reached by any
//! ray produces one point per sweep, placed at a fixed jittered location
//! inside the cell (the same location in every sweep, like a physical
//! feature on the ground). That keeps consecutive sweeps registrable by
//! point-to-point ICP, which fails on samples tied to the sensor.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, hash_unit, rng_for, stream};
use crate::synthworld::CompleteWorld;

pub const CLASS_ROAD: u8 = 0;
pub const CLASS_NOT_ROAD: u8 = 1;
/// Fraction of a cell over which ground features are jittered.
const ANCHOR_JITTER: f64 = 0.7;

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentPose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl AgentPose {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        AgentPose {
            x,
            y,
            yaw: wrap_angle(yaw),
        }
    }

    /// Sensor-frame point to world frame.
    pub fn to_world(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    /// World-frame point to sensor frame.
    pub fn to_sensor(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (p[0] - self.x, p[1] - self.y);
        [c * dx + s * dy, -s * dx + c * dy]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Sensor,
    World,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticPoint {
    pub x: f64,
    pub y: f64,
    pub class_id: u8,
    /// NaN unless the point is road.
    pub intensity: f64,
}

impl SemanticPoint {
    pub fn is_road(&self) -> bool {
        self.class_id == CLASS_ROAD
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticPointCloud {
    pub points: Vec<SemanticPoint>,
    pub frame: Frame,
}

impl SemanticPointCloud {
    pub fn new(frame: Frame) -> Self {
        SemanticPointCloud {
            points: Vec::new(),
            frame,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.points.iter().map(|p| p.xy()).collect()
    }

    fn mapped(&self, frame: Frame, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        let points = self
            .points
            .iter()
            .map(|p| {
                let [x, y] = f(p.xy());
                SemanticPoint { x, y, ..*p }
            })
            .collect();
        SemanticPointCloud { points, frame }
    }

    pub fn to_world(&self, pose: &AgentPose) -> Self {
        self.mapped(Frame::World, |p| pose.to_world(p))
    }

    pub fn to_sensor(&self, pose: &AgentPose) -> Self {
        self.mapped(Frame::Sensor, |p| pose.to_sensor(p))
    }

    /// SPC1 encoding. The frame is not stored.
    pub fn to_spc1(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 13 * self.points.len());
        out.extend_from_slice(b"SPC1");
        out.extend_from_slice(&(self.points.len() as u32).to_le_bytes());
        for p in &self.points {
            out.extend_from_slice(&(p.x as f32).to_le_bytes());
            out.extend_from_slice(&(p.y as f32).to_le_bytes());
            out.push(p.class_id);
            out.extend_from_slice(&(p.intensity as f32).to_le_bytes());
        }
        out
    }

    pub fn from_spc1(bytes: &[u8], frame: Frame) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != b"SPC1" {
            return Err(Error::format("missing SPC1 magic"));
        }
        let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = &bytes[8..];
        if body.len() != count * 13 {
            return Err(Error::format(format!(
                "SPC1 declares {count} points but holds {} bytes",
                body.len()
            )));
        }
        let f = |b: &[u8]| f32::from_le_bytes(b.try_into().unwrap()) as f64;
        let points = body
            .chunks_exact(13)
            .map(|r| SemanticPoint {
                x: f(&r[0..4]),
                y: f(&r[4..8]),
                class_id: r[8],
                intensity: f(&r[9..13]),
            })
            .collect();
        Ok(SemanticPointCloud { points, frame })
    }

    pub fn save_spc1(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_spc1())?;
        Ok(())
    }

    pub fn load_spc1(path: &Path, frame: Frame) -> Result<Self> {
        Self::from_spc1(&fs::read(path)?, frame)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub rays: usize,
    pub max_range: f64,
    pub step: f64,
    pub sensor_height: f64,
    /// Probability of flipping a point's class.
    pub label_noise: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            rays: 360,
            max_range: 16.0,
            step: 0.25,
            sensor_height: 1.8,
            label_noise: 0.0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rays < 8 {
            return Err(Error::config(format!("rays = {} (need at least 8)", self.rays)));
        }
        if !(self.max_range > 0.0 && self.step > 0.0) {
            return Err(Error::config("max_range and step must be positive"));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::config("label_noise must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Ray azimuths in the sensor frame, radians, starting at 0.
    pub fn azimuths(&self) -> Vec<f64> {
        (0..self.rays).map(|r| 2.0 * PI * r as f64 / self.rays as f64).collect()
    }
}

/// Cells visited by one ray in marching order (a cell repeats while the ray
/// stays inside it). Stops at the world border, at `max_range`, or before the
/// first cell taller than the sensor.
pub fn march_ray(world: &CompleteWorld, pose: &AgentPose, azimuth: f64, cfg: &SweepConfig) -> Vec<(f64, usize)> {
    let (s, c) = (pose.yaw + azimuth).sin_cos();
    let mut out = Vec::new();
    let mut k = 1usize;
    loop {
        let d = k as f64 * cfg.step;
        if d > cfg.max_range + 1e-12 {
            break;
        }
        let Some(idx) = world.cell_at(pose.x + c * d, pose.y + s * d) else {
            break;
        };
        if world.obstacle_height[idx] > cfg.sensor_height {
            break;
        }
        out.push((d, idx));
        k += 1;
    }
    out
}

/// Fixed ground-feature location inside a cell, in world coordinates.
pub fn cell_anchor(world: &CompleteWorld, idx: usize) -> [f64; 2] {
    let (cx, cy) = world.cell_center(idx);
    let seed = world.meta.spec.seed;
    let jitter = |axis| (hash_unit(seed, idx as u64, axis) - 0.5) * ANCHOR_JITTER * world.cell_m;
    [cx + jitter(0), cy + jitter(1)]
}

/// Sweep with points in the world frame.
pub fn sweep_world(
    world: &CompleteWorld,
    pose: &AgentPose,
    cfg: &SweepConfig,
    seed: u64,
) -> Result<SemanticPointCloud> {
    cfg.validate()?;
    if world.cell_at(pose.x, pose.y).is_none() || !pose.yaw.is_finite() {
        return Err(Error::domain(format!(
            "pose ({}, {}) lies outside the world",
            pose.x, pose.y
        )));
    }
    let mut rng = rng_for(seed, stream::SWEEP);
    let mut seen = vec![false; world.semantic.len()];
    let mut cloud = SemanticPointCloud::new(Frame::World);
    for az in cfg.azimuths() {
        for (_, idx) in march_ray(world, pose, az, cfg) {
            if std::mem::replace(&mut seen[idx], true) {
                continue;
            }
            let mut road = world.is_road(idx);
            if cfg.label_noise > 0.0 && rng.random::<f64>() < cfg.label_noise {
                road = !road;
            }
            let [x, y] = cell_anchor(world, idx);
            let (class_id, intensity) = if road {
                let v = if world.is_road(idx) { world.intensity[idx] } else { 0.0 };
                (CLASS_ROAD, v)
            } else {
                (CLASS_NOT_ROAD, f64::NAN)
            };
            cloud.points.push(SemanticPoint {
                x,
                y,
                class_id,
                intensity,
            });
        }
    }
    Ok(cloud)
}

/// One sweep from `pose`, expressed in the sensor frame.
pub fn sweep(world: &CompleteWorld, pose: &AgentPose, cfg: &SweepConfig, seed: u64) -> Result<SemanticPointCloud> {
    Ok(sweep_world(world, pose, cfg, seed)?.to_sensor(pose))
}

/// Sensor-frame sweeps for every pose, each with its own derived seed.
pub fn simulate(
    world: &CompleteWorld,
    poses: &[AgentPose],
    cfg: &SweepConfig,
    seed: u64,
) -> Result<Vec<SemanticPointCloud>> {
    poses
        .iter()
        .enumerate()
        .map(|(k, pose)| sweep(world, pose, cfg, derive_seed(seed, k as u64)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryOpts {
    /// Distance between consecutive poses (at most 1 m).
    pub step_m: f64,
    /// Arclength along the main road of the first pose.
    pub start_m: f64,
    /// Amplitude of a slow seeded lateral weave around the centerline.
    pub lateral_m: f64,
}

impl Default for TrajectoryOpts {
    fn default() -> Self {
        TrajectoryOpts {
            step_m: 0.25,
            start_m: 2.0,
            lateral_m: 0.0,
        }
    }
}

pub const MAX_STEP_M: f64 = 1.0;

/// Poses along the main road starting at `opts.start_m`, heading along it.
pub fn plan_trajectory(
    world: &CompleteWorld,
    steps: usize,
    seed: u64,
    opts: &TrajectoryOpts,
) -> Result<Vec<AgentPose>> {
    if steps < 2 {
        return Err(Error::config(format!("steps = {steps} (need at least 2)")));
    }
    if !(opts.step_m > 0.0 && opts.step_m <= MAX_STEP_M) {
        return Err(Error::config(format!(
            "step_m = {} outside (0, {MAX_STEP_M}]",
            opts.step_m
        )));
    }
    let route = &world.meta.route;
    let mut cum = vec![0.0];
    for w in route.windows(2) {
        let l = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
        cum.push(cum.last().unwrap() + l);
    }
    let total = *cum.last().unwrap();
    let phase = rng_for(seed, stream::TRAJECTORY).random::<f64>() * 2.0 * PI;
    let mut poses = Vec::with_capacity(steps);
    for k in 0..steps {
        let s = opts.start_m + k as f64 * opts.step_m;
        if s > total || s < 0.0 {
            return Err(Error::Generation(format!(
                "route is {total:.1} m long; step {k} needs {s:.1} m"
            )));
        }
        let seg = cum.partition_point(|&c| c <= s).clamp(1, route.len() - 1) - 1;
        let (a, b) = (route[seg], route[seg + 1]);
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
        let yaw = (b[1] - a[1]).atan2(b[0] - a[0]);
        let off = opts.lateral_m * (2.0 * PI * s / 20.0 + phase).sin();
        let x = a[0] + t * (b[0] - a[0]) - yaw.sin() * off;
        let y = a[1] + t * (b[1] - a[1]) + yaw.cos() * off;
        match world.cell_at(x, y) {
            Some(idx) if world.is_road(idx) => poses.push(AgentPose::new(x, y, yaw)),
            _ => {
                return Err(Error::Generation(format!(
                    "pose {k} at ({x:.2}, {y:.2}) is off the road"
                )))
            }
        }
    }
    Ok(poses)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn pose_frames_invert() {
        let pose = AgentPose::new(3.0, -2.0, 0.7);
        let p = [1.5, 4.0];
        let back = pose.to_sensor(pose.to_world(p));
        assert!((back[0] - p[0]).abs() < 1e-12 && (back[1] - p[1]).abs() < 1e-12);
    }

    #[test]
    fn spc1_rejects_bad_length() {
        let cloud = SemanticPointCloud {
            points: vec![SemanticPoint {
                x: 1.0,
                y: 2.0,
                class_id: CLASS_ROAD,
                intensity: 0.5,
            }],
            frame: Frame::Sensor,
        };
        let bytes = cloud.to_spc1();
        assert_eq!(bytes.len(), 8 + 13);
        assert_eq!(SemanticPointCloud::from_spc1(&bytes, Frame::Sensor).unwrap(), cloud);
        assert!(SemanticPointCloud::from_spc1(&bytes[..20], Frame::Sensor).is_err());
    }
}
