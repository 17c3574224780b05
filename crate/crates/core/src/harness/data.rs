//! Traversal samples: one world, one drive, one past/full split.

use serde::{Deserialize, Serialize};

use crate::bevgrid::{split_past_full, GridGeometry, Role, StateTensor};
use crate::error::{Error, Result};
use crate::register::IcpOptions;
use crate::rng::{derive_seed, stream};
use crate::sensim::{plan_trajectory, simulate, AgentPose, SemanticPointCloud, SweepConfig, TrajectoryOpts};
use crate::synthworld::{generate_world, BranchInfo, CompleteWorld, LayoutKind, WorldSpec};
use crate::tensornet::Tensor;
use crate::State32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraversalConfig {
    pub extent_m: f64,
    pub cell_m: f64,
    pub road_width_range: (f64, f64),
    pub branch_prob: f64,
    pub sweep: SweepConfig,
    pub step_m: f64,
    /// Distance driven from the split pose to the centre of a stochastic
    /// branch (the junction sits at the middle of the world).
    pub branch_lead_m: f64,
    pub past_steps: usize,
    pub future_steps: usize,
    pub geometry: GridGeometry,
    pub icp: IcpOptions,
}

impl Default for TraversalConfig {
    fn default() -> Self {
        TraversalConfig {
            extent_m: 64.0,
            cell_m: 0.5,
            road_width_range: (4.0, 6.0),
            branch_prob: 0.5,
            sweep: SweepConfig {
                max_range: 8.0,
                ..SweepConfig::default()
            },
            step_m: 0.25,
            branch_lead_m: 9.2,
            past_steps: 20,
            future_steps: 48,
            geometry: GridGeometry::default(),
            icp: IcpOptions {
                coarse: None,
                ..IcpOptions::default()
            },
        }
    }
}

impl TraversalConfig {
    /// Route arclength of the split pose.
    pub fn split_m(&self) -> f64 {
        self.extent_m / 2.0 - self.branch_lead_m
    }

    pub fn world_spec(&self, seed: u64, layout: LayoutKind) -> WorldSpec {
        WorldSpec {
            seed,
            extent_m: self.extent_m,
            cell_m: self.cell_m,
            road_width_range: self.road_width_range,
            layout_kind: layout,
            branch_prob: self.branch_prob,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.world_spec(0, LayoutKind::Straight).validate()?;
        self.sweep.validate()?;
        self.geometry.dim()?;
        if self.past_steps < 1 || self.future_steps < 1 {
            return Err(Error::config("past_steps and future_steps must be at least 1"));
        }
        let start = self.split_m() - (self.past_steps - 1) as f64 * self.step_m;
        if start < 0.0 {
            return Err(Error::config(format!(
                "the drive would start {start:.1} m before the world edge"
            )));
        }
        Ok(())
    }
}

/// The observation pair of one traversal plus what the evaluation needs to
/// know about the world it came from.
#[derive(Debug, Clone)]
pub struct TraversalSample {
    pub seed: u64,
    pub layout: LayoutKind,
    pub x_past: State32,
    pub x_full: State32,
    /// World pose of the agent at the split step (the frame of both states).
    pub split_pose: AgentPose,
    pub branch: Option<BranchInfo>,
    pub main_y: f64,
}

/// A world, the drive through it and one sweep per pose (sensor frame).
#[derive(Debug, Clone)]
pub struct Traversal {
    pub world: CompleteWorld,
    pub poses: Vec<AgentPose>,
    pub sweeps: Vec<SemanticPointCloud>,
}

pub fn simulate_traversal(cfg: &TraversalConfig, seed: u64, layout: LayoutKind) -> Result<Traversal> {
    let world = generate_world(&cfg.world_spec(seed, layout))?;
    let opts = TrajectoryOpts {
        step_m: cfg.step_m,
        start_m: cfg.split_m() - (cfg.past_steps - 1) as f64 * cfg.step_m,
        lateral_m: 0.0,
    };
    let steps = cfg.past_steps + cfg.future_steps;
    let poses = plan_trajectory(&world, steps, derive_seed(seed, stream::TRAJECTORY), &opts)?;
    let sweeps = simulate(&world, &poses, &cfg.sweep, derive_seed(seed, stream::SWEEP))?;
    Ok(Traversal { world, poses, sweeps })
}

pub fn build_sample(cfg: &TraversalConfig, seed: u64, layout: LayoutKind) -> Result<TraversalSample> {
    let Traversal { world, poses, sweeps } = simulate_traversal(cfg, seed, layout)?;
    let pf = split_past_full::<f32>(&sweeps, cfg.past_steps, cfg.geometry, &cfg.icp)?;
    Ok(TraversalSample {
        seed,
        layout,
        x_past: pf.past(),
        x_full: pf.full(),
        split_pose: poses[cfg.past_steps - 1],
        branch: world.meta.branch,
        main_y: world.main_y(),
    })
}

/// Ground-truth state around `pose`: road and intensity sampled from the
/// world at every grid cell centre, mask all ones.
pub fn truth_state(world: &CompleteWorld, pose: &AgentPose, geometry: GridGeometry) -> Result<State32> {
    let n = geometry.dim()?;
    let cells = n * n;
    let mut data = vec![0.0f32; 3 * cells];
    for k in 0..cells {
        let [x, y] = pose.to_world(geometry.cell_center(n, k));
        if let Some(idx) = world.cell_at(x, y) {
            data[k] = world.semantic[idx] as f32;
            data[cells + k] = world.intensity[idx] as f32;
        }
        data[2 * cells + k] = 1.0;
    }
    StateTensor::from_tensor(Tensor::from_vec(&[3, n, n], data)?, Role::Full)
}

/// Grid cells lying in the branch corridor beyond the stub, where the
/// realized outcome decides between road and not-road.
pub fn branch_cells(sample: &TraversalSample, geometry: GridGeometry) -> Result<Vec<usize>> {
    let Some(b) = sample.branch else {
        return Ok(Vec::new());
    };
    let n = geometry.dim()?;
    Ok((0..n * n)
        .filter(|&k| {
            let [x, y] = sample.split_pose.to_world(geometry.cell_center(n, k));
            b.corridor_contains(sample.main_y, x, y)
        })
        .collect())
}
