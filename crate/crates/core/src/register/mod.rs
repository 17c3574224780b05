//! Ego-motion by ICP and accumulation of sweeps into the current agent frame.

mod coarse;
mod kdtree;
mod transform;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sensim::{Frame, SemanticPointCloud};

pub use coarse::{coarse_align, CoarseSearch};
pub use kdtree::KdTree;
pub use transform::{chain, wrap, Transform2};

pub type RigidTransform2D = Transform2<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpOptions {
    pub max_iters: usize,
    /// Stop once the residual improves by less than this (meters).
    pub tol: f64,
    /// Pairs farther apart than this are ignored by the alignment step and
    /// count as this distance in the residual. `None` disables the gate.
    pub max_correspondence: Option<f64>,
    /// Alignment additionally ignores pairs farther apart than this multiple
    /// of the median pair distance (never below `trim_floor`). Removes points
    /// that entered or left the sensor range between the two sweeps.
    pub trim_factor: Option<f64>,
    pub trim_floor: f64,
    /// Semantic clouds additionally run ICP from the best hypothesis of a
    /// correlative search; the lower final residual wins. `None` runs ICP
    /// from the identity only.
    pub coarse: Option<CoarseSearch>,
}

impl Default for IcpOptions {
    fn default() -> Self {
        IcpOptions {
            max_iters: 50,
            tol: 1e-6,
            max_correspondence: Some(2.0),
            trim_factor: Some(3.0),
            trim_floor: 0.05,
            coarse: Some(CoarseSearch::default()),
        }
    }
}

impl IcpOptions {
    /// Plain point-to-point ICP: every nearest neighbour is used.
    pub fn ungated() -> Self {
        IcpOptions {
            max_correspondence: None,
            trim_factor: None,
            coarse: None,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult<T> {
    /// Maps source coordinates onto the target.
    pub transform: Transform2<T>,
    /// Final mean correspondence distance.
    pub residual: T,
    /// Residual at identity followed by one entry per accepted iteration.
    pub history: Vec<T>,
    pub inliers: usize,
}

struct Matching<T> {
    pairs: Vec<(usize, usize, T)>,
    residual: T,
}

impl<T: Scalar> Matching<T> {
    /// Pairs used by the next alignment step, with their current distances.
    fn alignment_pairs(&self, opts: &IcpOptions) -> Vec<(usize, usize, T)> {
        let Some(factor) = opts.trim_factor else {
            return self.pairs.clone();
        };
        let mut d: Vec<T> = self.pairs.iter().map(|p| p.2).collect();
        let mid = d.len() / 2;
        d.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
        let cut = (T::lit(factor) * d[mid]).max(T::lit(opts.trim_floor));
        self.pairs.iter().filter(|p| p.2 <= cut).copied().collect()
    }
}

/// Distances below this get the same alignment weight.
const WEIGHT_FLOOR: f64 = 1e-9;

fn check_cloud<T: Scalar>(name: &str, pts: &[[T; 2]]) -> Result<()> {
    if pts.len() < 3 {
        return Err(Error::Degenerate(format!(
            "{name} cloud has {} points (need at least 3)",
            pts.len()
        )));
    }
    if pts.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
        return Err(Error::domain(format!("{name} cloud has non-finite coordinates")));
    }
    Ok(())
}

fn correspond<T: Scalar>(tree: &KdTree<T>, source: &[[T; 2]], tf: &Transform2<T>, gate: Option<T>) -> Matching<T> {
    let mut pairs = Vec::with_capacity(source.len());
    let mut total = T::zero();
    for (i, &p) in source.iter().enumerate() {
        let (j, d2) = tree.nearest(tf.apply(p)).expect("target is nonempty");
        let d = d2.sqrt();
        match gate {
            Some(g) if d > g => total += g,
            _ => {
                total += d;
                pairs.push((i, j, d));
            }
        }
    }
    Matching {
        pairs,
        residual: total / T::lit(source.len() as f64),
    }
}

/// Closed-form weighted least-squares rigid alignment of matched pairs.
fn procrustes<T: Scalar>(source: &[[T; 2]], target: &[[T; 2]], pairs: &[(usize, usize, T)]) -> Transform2<T> {
    let mut n = T::zero();
    let (mut sa, mut sb) = ([T::zero(); 2], [T::zero(); 2]);
    for &(i, j, w) in pairs {
        n += w;
        for k in 0..2 {
            sa[k] += w * source[i][k];
            sb[k] += w * target[j][k];
        }
    }
    let ca = [sa[0] / n, sa[1] / n];
    let cb = [sb[0] / n, sb[1] / n];
    let (mut dot, mut cross) = (T::zero(), T::zero());
    for &(i, j, w) in pairs {
        let a = [source[i][0] - ca[0], source[i][1] - ca[1]];
        let b = [target[j][0] - cb[0], target[j][1] - cb[1]];
        dot += w * (a[0] * b[0] + a[1] * b[1]);
        cross += w * (a[0] * b[1] - a[1] * b[0]);
    }
    let rotation = cross.atan2(dot);
    let rot = Transform2::rotation_only(rotation).apply(ca);
    Transform2::new(rotation, cb[0] - rot[0], cb[1] - rot[1])
}

/// Point-to-point ICP from the identity.
///
/// The plain least-squares step decreases the mean squared distance, not the
/// mean distance we report. When it would raise the residual, the step is
/// recomputed with each pair weighted by the inverse of its current distance,
/// a majorize-minimize update of the mean distance itself. A step is only
/// accepted when it does not raise the residual, so the reported history
/// never increases.
pub fn icp_points<T: Scalar>(source: &[[T; 2]], target: &[[T; 2]], opts: &IcpOptions) -> Result<IcpResult<T>> {
    icp_points_from(source, target, Transform2::identity(), opts)
}

/// [`icp_points`] starting from `init` instead of the identity.
pub fn icp_points_from<T: Scalar>(
    source: &[[T; 2]],
    target: &[[T; 2]],
    init: Transform2<T>,
    opts: &IcpOptions,
) -> Result<IcpResult<T>> {
    check_cloud("source", source)?;
    check_cloud("target", target)?;
    let tree = KdTree::new(target);
    let gate = opts.max_correspondence.map(T::lit);
    let tol = T::lit(opts.tol);
    let mut tf = init;
    let mut m = correspond(&tree, source, &tf, gate);
    let mut history = vec![m.residual];
    for _ in 0..opts.max_iters {
        let pairs = m.alignment_pairs(opts);
        if pairs.len() < 3 {
            break;
        }
        let plain: Vec<_> = pairs.iter().map(|&(i, j, _)| (i, j, T::one())).collect();
        let mut cand = procrustes(source, target, &plain);
        let mut next = correspond(&tree, source, &cand, gate);
        if next.residual > m.residual {
            let floor = T::lit(WEIGHT_FLOOR);
            let weighted: Vec<_> = pairs.iter().map(|&(i, j, d)| (i, j, T::one() / d.max(floor))).collect();
            cand = procrustes(source, target, &weighted);
            next = correspond(&tree, source, &cand, gate);
            if next.residual > m.residual {
                break;
            }
        }
        let gain = m.residual - next.residual;
        tf = cand;
        m = next;
        history.push(m.residual);
        if gain < tol {
            break;
        }
    }
    if m.pairs.len() < 3 {
        return Err(Error::Degenerate(format!(
            "only {} correspondences inside the gate",
            m.pairs.len()
        )));
    }
    Ok(IcpResult {
        transform: tf,
        residual: m.residual,
        history,
        inliers: m.pairs.len(),
    })
}

/// ICP between two semantic clouds. Class labels only inform the coarse
/// search; the alignment itself uses every point.
pub fn icp(source: &SemanticPointCloud, target: &SemanticPointCloud, opts: &IcpOptions) -> Result<IcpResult<f64>> {
    let (src, tgt) = (source.positions(), target.positions());
    let plain = icp_points(&src, &tgt, opts)?;
    let Some(search) = &opts.coarse else {
        return Ok(plain);
    };
    let init = coarse_align(source, target, search);
    if init == Transform2::identity() {
        return Ok(plain);
    }
    let seeded = icp_points_from(&src, &tgt, init, opts)?;
    Ok(if seeded.residual < plain.residual {
        seeded
    } else {
        plain
    })
}

/// All observations so far, expressed in the frame of the latest sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct AccumulatedCloud {
    pub points: SemanticPointCloud,
    /// `trajectory[k]` maps the frame of sweep k onto the frame of sweep k+1.
    pub trajectory: Vec<RigidTransform2D>,
    pub timestep_of_point: Vec<u32>,
    last_sweep: Option<SemanticPointCloud>,
}

impl Default for AccumulatedCloud {
    fn default() -> Self {
        Self::new()
    }
}

impl AccumulatedCloud {
    pub fn new() -> Self {
        AccumulatedCloud {
            points: SemanticPointCloud::new(Frame::Sensor),
            trajectory: Vec::new(),
            timestep_of_point: Vec::new(),
            last_sweep: None,
        }
    }

    /// Number of sweeps accumulated.
    pub fn steps(&self) -> usize {
        if self.last_sweep.is_some() {
            self.trajectory.len() + 1
        } else {
            0
        }
    }

    /// Registers `sweep` against the previous one, moves every stored point
    /// into the new frame and appends the sweep.
    pub fn push(&mut self, sweep: &SemanticPointCloud, opts: &IcpOptions) -> Result<&RigidTransform2D> {
        let t = self.steps() as u32;
        if let Some(prev) = &self.last_sweep {
            let step = icp(prev, sweep, opts)?.transform;
            for p in &mut self.points.points {
                let [x, y] = step.apply([p.x, p.y]);
                p.x = x;
                p.y = y;
            }
            self.trajectory.push(step);
        } else if sweep.len() < 3 {
            return Err(Error::Degenerate(format!(
                "first sweep has {} points (need at least 3)",
                sweep.len()
            )));
        }
        self.points.points.extend_from_slice(&sweep.points);
        self.timestep_of_point.extend(std::iter::repeat_n(t, sweep.len()));
        self.last_sweep = Some(sweep.clone());
        Ok(self.trajectory.last().unwrap_or(&IDENTITY))
    }

    /// Pose of the agent at sweep `k` expressed in the current frame.
    pub fn pose_in_current(&self, k: usize) -> RigidTransform2D {
        chain(&self.trajectory[k..])
    }
}

const IDENTITY: RigidTransform2D = Transform2 {
    rotation: 0.0,
    tx: 0.0,
    ty: 0.0,
};

/// Functional form of [`AccumulatedCloud::push`].
pub fn accumulate(
    mut acc: AccumulatedCloud,
    new_sweep: &SemanticPointCloud,
    opts: &IcpOptions,
) -> Result<AccumulatedCloud> {
    acc.push(new_sweep, opts)?;
    Ok(acc)
}

pub fn trajectory_json(steps: &[RigidTransform2D]) -> Result<String> {
    Ok(serde_json::to_string_pretty(steps)?)
}

pub fn save_trajectory(steps: &[RigidTransform2D], path: &Path) -> Result<()> {
    fs::write(path, trajectory_json(steps)?)?;
    Ok(())
}

pub fn load_trajectory(path: &Path) -> Result<Vec<RigidTransform2D>> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}
