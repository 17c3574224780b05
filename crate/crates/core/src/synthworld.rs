//! Procedural road worlds used as simulation ground truth.
//!
//! Worlds are square grids in a world frame with the origin at the lower-left
//! corner, x to the east (column index) and y to the north (row index). Every
//! layout has a main road that enters at the west edge along `y = extent/2`;
//! trajectories follow it eastwards.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::smooth_field;
use crate::pnm::{self, Image};
use crate::rng::{rng_for, stream, Rng};

/// Lateral offset (from the main road centerline) where the stub of a
/// stochastic branch ends when the branch does not continue.
pub const BRANCH_STUB_END_M: f64 = 4.5;
/// Free space kept between buildings and any road edge.
pub const OBSTACLE_CLEARANCE_M: f64 = 1.5;
const ROUTE_SPACING_M: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutKind {
    Straight,
    Curve,
    TIntersection,
    Crossroad,
    StochasticBranch,
}

impl LayoutKind {
    pub const ALL: [LayoutKind; 5] = [
        LayoutKind::Straight,
        LayoutKind::Curve,
        LayoutKind::TIntersection,
        LayoutKind::Crossroad,
        LayoutKind::StochasticBranch,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub seed: u64,
    pub extent_m: f64,
    pub cell_m: f64,
    pub road_width_range: (f64, f64),
    pub layout_kind: LayoutKind,
    pub branch_prob: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            seed: 0,
            extent_m: 32.0,
            cell_m: 0.5,
            road_width_range: (4.0, 6.0),
            layout_kind: LayoutKind::Straight,
            branch_prob: 0.5,
        }
    }
}

/// Returns the number of cells per side if `extent / cell` is a positive integer.
pub fn grid_dim(extent_m: f64, cell_m: f64) -> Result<usize> {
    if !(cell_m > 0.0 && extent_m > 0.0 && cell_m.is_finite() && extent_m.is_finite()) {
        return Err(Error::config(format!(
            "extent {extent_m} m and cell {cell_m} m must be positive"
        )));
    }
    let n = extent_m / cell_m;
    let r = n.round();
    if r < 1.0 || (n - r).abs() > 1e-9 * n.max(1.0) {
        return Err(Error::config(format!(
            "extent {extent_m} m is not a whole number of {cell_m} m cells"
        )));
    }
    Ok(r as usize)
}

impl WorldSpec {
    pub fn validate(&self) -> Result<usize> {
        let n = grid_dim(self.extent_m, self.cell_m)?;
        if !(0.0..=1.0).contains(&self.branch_prob) {
            return Err(Error::config(format!(
                "branch_prob {} outside [0, 1]",
                self.branch_prob
            )));
        }
        let (lo, hi) = self.road_width_range;
        if !(lo > 0.0 && lo <= hi && hi < self.extent_m / 2.0) {
            return Err(Error::config(format!(
                "road_width_range ({lo}, {hi}) must satisfy 0 < min <= max < extent/2"
            )));
        }
        Ok(n)
    }
}

/// The realized stochastic branch of a `stochastic_branch` world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchInfo {
    pub continues: bool,
    /// x of the side road centerline.
    pub junction_x: f64,
    /// +1 when the branch leaves to the north, -1 to the south.
    pub side: f64,
    pub width: f64,
    /// Lateral distance from the main centerline where the stub ends.
    pub stub_end: f64,
}

impl BranchInfo {
    /// Whether a world point lies in the corridor the branch occupies past its stub.
    pub fn corridor_contains(&self, main_y: f64, x: f64, y: f64) -> bool {
        (x - self.junction_x).abs() < self.width / 2.0 && self.side * (y - main_y) > self.stub_end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldMeta {
    pub spec: WorldSpec,
    pub main_width: f64,
    pub branch: Option<BranchInfo>,
    /// Main road centerline from the west edge, sampled every 0.25 m.
    pub route: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompleteWorld {
    pub size: usize,
    pub cell_m: f64,
    /// Road = 1, not road = 0, row-major with row 0 at the south edge.
    pub semantic: Vec<u8>,
    /// Texture in [0, 1] on road cells, 0 elsewhere.
    pub intensity: Vec<f64>,
    pub obstacle_height: Vec<f64>,
    pub meta: WorldMeta,
}

impl CompleteWorld {
    pub fn extent_m(&self) -> f64 {
        self.size as f64 * self.cell_m
    }

    pub fn main_y(&self) -> f64 {
        self.extent_m() / 2.0
    }

    /// Cell index containing a world point, if inside the world.
    pub fn cell_at(&self, x: f64, y: f64) -> Option<usize> {
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let j = (x / self.cell_m).floor() as usize;
        let i = (y / self.cell_m).floor() as usize;
        (i < self.size && j < self.size).then_some(i * self.size + j)
    }

    pub fn cell_center(&self, idx: usize) -> (f64, f64) {
        let (i, j) = (idx / self.size, idx % self.size);
        ((j as f64 + 0.5) * self.cell_m, (i as f64 + 0.5) * self.cell_m)
    }

    pub fn is_road(&self, idx: usize) -> bool {
        self.semantic[idx] == 1
    }

    pub fn road_fraction(&self) -> f64 {
        self.semantic.iter().filter(|&&s| s == 1).count() as f64 / self.semantic.len() as f64
    }

    /// Writes `semantic.pgm`, `intensity.pgm`, `composite.ppm`, `world.json`
    /// and `world.pwg` into `dir`.
    pub fn save_archive(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        render_world(self, RenderChannel::Semantic, &dir.join("semantic.pgm"))?;
        render_world(self, RenderChannel::Intensity, &dir.join("intensity.pgm"))?;
        render_world(self, RenderChannel::Composite, &dir.join("composite.ppm"))?;
        fs::write(dir.join("world.json"), serde_json::to_vec_pretty(&self.meta)?)?;
        crate::bevgrid::pwg::write_world(self, &dir.join("world.pwg"))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderChannel {
    Semantic,
    Intensity,
    /// Red = road, green = intensity, blue = obstacle height (scaled by 20 m).
    Composite,
}

pub fn render_image(world: &CompleteWorld, channel: RenderChannel) -> Image {
    let n = world.size;
    let sem: Vec<f64> = world.semantic.iter().map(|&s| s as f64).collect();
    match channel {
        RenderChannel::Semantic => pnm::gray_from_grid(n, &sem),
        RenderChannel::Intensity => pnm::gray_from_grid(n, &world.intensity),
        RenderChannel::Composite => {
            let mut data = Vec::with_capacity(3 * n * n);
            for i in (0..n).rev() {
                for j in 0..n {
                    let k = i * n + j;
                    data.push(pnm::quantize(sem[k]));
                    data.push(pnm::quantize(world.intensity[k]));
                    data.push(pnm::quantize(world.obstacle_height[k] / 20.0));
                }
            }
            Image {
                width: n,
                height: n,
                channels: 3,
                data,
            }
        }
    }
}

pub fn render_world(world: &CompleteWorld, channel: RenderChannel, path: &Path) -> Result<()> {
    render_image(world, channel).save(path)
}

/// A straight road piece: every point within `half_width` of segment `a`–`b`.
#[derive(Debug, Clone, Copy)]
struct Capsule {
    a: [f64; 2],
    b: [f64; 2],
    half_width: f64,
    /// Cut the road flat at `b` instead of rounding it.
    square_end: bool,
}

impl Capsule {
    fn new(a: [f64; 2], b: [f64; 2], half_width: f64) -> Self {
        Capsule {
            a,
            b,
            half_width,
            square_end: false,
        }
    }

    /// Signed distance to the road edge (negative inside), distance to the
    /// centerline, and along-segment coordinate of the foot point.
    fn project(&self, p: [f64; 2]) -> (f64, f64, f64) {
        let d = [self.b[0] - self.a[0], self.b[1] - self.a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let len = len2.sqrt();
        let rel = [p[0] - self.a[0], p[1] - self.a[1]];
        let raw = (rel[0] * d[0] + rel[1] * d[1]) / len2;
        let t = raw.clamp(0.0, 1.0);
        let foot = [self.a[0] + t * d[0], self.a[1] + t * d[1]];
        let dist = ((p[0] - foot[0]).powi(2) + (p[1] - foot[1]).powi(2)).sqrt();
        let mut edge = dist - self.half_width;
        if self.square_end && raw > 1.0 {
            edge = edge.max((raw - 1.0) * len);
        }
        (edge, dist, t * len)
    }
}

fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn polyline_capsules(points: &[[f64; 2]], half_width: f64) -> Vec<Capsule> {
    points
        .windows(2)
        .map(|w| Capsule::new(w[0], w[1], half_width))
        .collect()
}

fn resample(points: &[[f64; 2]], spacing: f64) -> Vec<[f64; 2]> {
    let mut out = vec![points[0]];
    let mut carry = 0.0;
    for w in points.windows(2) {
        let d = [w[1][0] - w[0][0], w[1][1] - w[0][1]];
        let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
        let mut s = spacing - carry;
        while s <= len + 1e-12 {
            out.push([w[0][0] + d[0] * s / len, w[0][1] + d[1] * s / len]);
            s += spacing;
        }
        carry = len - (s - spacing);
    }
    out
}

struct Layout {
    roads: Vec<Capsule>,
    route: Vec<[f64; 2]>,
    main_width: f64,
    branch: Option<BranchInfo>,
}

fn side_sign(rng: &mut Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

fn build_layout(spec: &WorldSpec, rng: &mut Rng) -> Layout {
    let e = spec.extent_m;
    let yc = e / 2.0;
    let (wlo, whi) = spec.road_width_range;
    let main_width = uniform(rng, wlo, whi);
    let hw = main_width / 2.0;
    // Segments reach well past the borders so no rounded end caps show up.
    let far = 2.0 * e;
    let straight_main = vec![[-far, yc], [e + far, yc]];
    let mut roads = Vec::new();
    let mut branch = None;
    let route_pts: Vec<[f64; 2]> = match spec.layout_kind {
        LayoutKind::Straight => straight_main,
        LayoutKind::Curve => {
            let bend_x = uniform(rng, 0.35 * e, 0.55 * e);
            let radius = uniform(rng, 0.3 * e, 0.6 * e);
            let turn = uniform(rng, 25.0, 60.0).to_radians();
            let dir = side_sign(rng);
            let mut pts = vec![[-far, yc], [bend_x, yc]];
            let center = [bend_x, yc + dir * radius];
            let steps = 64;
            for k in 1..=steps {
                let a = turn * k as f64 / steps as f64;
                pts.push([center[0] + radius * a.sin(), center[1] - dir * radius * a.cos()]);
            }
            let last = *pts.last().unwrap();
            pts.push([last[0] + far * turn.cos(), last[1] + dir * far * turn.sin()]);
            pts
        }
        LayoutKind::TIntersection | LayoutKind::Crossroad => {
            let jx = uniform(rng, 0.3 * e, 0.8 * e);
            let side_hw = uniform(rng, wlo, whi) / 2.0;
            let dir = side_sign(rng);
            let (from, to) = if spec.layout_kind == LayoutKind::Crossroad {
                (yc - dir * far, yc + dir * far)
            } else {
                (yc, yc + dir * far)
            };
            roads.push(Capsule::new([jx, from], [jx, to], side_hw));
            straight_main
        }
        LayoutKind::StochasticBranch => {
            let side = side_sign(rng);
            let continues = rng.random::<f64>() < spec.branch_prob;
            let info = BranchInfo {
                continues,
                junction_x: e / 2.0,
                side,
                width: wlo,
                stub_end: BRANCH_STUB_END_M,
            };
            let reach = if continues { far } else { info.stub_end };
            roads.push(Capsule {
                square_end: true,
                ..Capsule::new(
                    [info.junction_x, yc],
                    [info.junction_x, yc + side * reach],
                    info.width / 2.0,
                )
            });
            branch = Some(info);
            straight_main
        }
    };
    roads.extend(polyline_capsules(&route_pts, hw));
    let route = clip_route(&resample(&route_pts, ROUTE_SPACING_M), e);
    Layout {
        roads,
        route,
        main_width,
        branch,
    }
}

/// Keeps the stretch of the route that lies inside the world, starting at x = 0.
fn clip_route(points: &[[f64; 2]], e: f64) -> Vec<[f64; 2]> {
    let inside = |p: &[f64; 2]| p[0] >= 0.0 && p[0] <= e && p[1] >= 0.0 && p[1] <= e;
    points
        .iter()
        .skip_while(|p| !inside(p))
        .take_while(|p| inside(p))
        .copied()
        .collect()
}

/// Generates the world described by `spec`; a pure function of the spec.
pub fn generate_world(spec: &WorldSpec) -> Result<CompleteWorld> {
    let n = spec.validate()?;
    let cell = spec.cell_m;
    let e = spec.extent_m;
    let yc = e / 2.0;
    let mut layout_rng = rng_for(spec.seed, stream::WORLD_LAYOUT);
    let layout = build_layout(spec, &mut layout_rng);

    let mut semantic = vec![0u8; n * n];
    // Signed clearance to the nearest road edge, for obstacle placement.
    let mut clearance = vec![f64::INFINITY; n * n];
    let mut marking = vec![0.0f64; n * n];
    let mut tex_rng = rng_for(spec.seed, stream::WORLD_TEXTURE);
    let wavelength = uniform(&mut tex_rng, 3.0, 6.0);
    let phase = uniform(&mut tex_rng, 0.0, 2.0 * PI);
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            let p = [(j as f64 + 0.5) * cell, (i as f64 + 0.5) * cell];
            for road in &layout.roads {
                let (edge, dist, along) = road.project(p);
                clearance[k] = clearance[k].min(edge);
                if edge < 0.0 {
                    semantic[k] = 1;
                    let across = (-dist * dist / (2.0 * 0.3f64.powi(2))).exp();
                    let dash = 0.5 + 0.5 * (2.0 * PI * along / wavelength + phase).sin();
                    marking[k] = marking[k].max(across * dash);
                }
            }
            // Keep the whole branch corridor free whatever the outcome, so
            // buildings never hint at it.
            if let Some(b) = &layout.branch {
                if (p[0] - b.junction_x).abs() < b.width / 2.0 + OBSTACLE_CLEARANCE_M && b.side * (p[1] - yc) > 0.0 {
                    clearance[k] = clearance[k].min(0.0);
                }
            }
        }
    }
    if !semantic.contains(&1) || layout.route.len() < 2 {
        return Err(Error::Generation("layout produced no road".into()));
    }

    let noise = smooth_field(&mut tex_rng, n, (n / 16).max(2));
    let mut intensity = vec![0.0; n * n];
    let raw: Vec<f64> = (0..n * n).map(|k| 0.6 * marking[k] + 0.4 * noise[k]).collect();
    let (lo, hi) = (0..n * n)
        .filter(|&k| semantic[k] == 1)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), k| {
            (lo.min(raw[k]), hi.max(raw[k]))
        });
    let span = if hi > lo { hi - lo } else { 1.0 };
    for k in 0..n * n {
        if semantic[k] == 1 {
            intensity[k] = ((raw[k] - lo) / span).clamp(0.0, 1.0);
        }
    }

    let obstacle_height = place_obstacles(spec, n, &clearance);

    Ok(CompleteWorld {
        size: n,
        cell_m: cell,
        semantic,
        intensity,
        obstacle_height,
        meta: WorldMeta {
            spec: spec.clone(),
            main_width: layout.main_width,
            branch: layout.branch,
            route: layout.route,
        },
    })
}

fn place_obstacles(spec: &WorldSpec, n: usize, clearance: &[f64]) -> Vec<f64> {
    let cell = spec.cell_m;
    let e = spec.extent_m;
    let mut rng = rng_for(spec.seed, stream::WORLD_OBSTACLES);
    let mut height = vec![0.0; n * n];
    let attempts = ((e / 8.0).powi(2) * 2.0).ceil() as usize;
    for _ in 0..attempts {
        let (w, h) = (uniform(&mut rng, 3.0, 8.0), uniform(&mut rng, 3.0, 8.0));
        let (x0, y0) = (uniform(&mut rng, 0.0, e - w), uniform(&mut rng, 0.0, e - h));
        let z = uniform(&mut rng, 1.0, 12.0);
        let (j0, j1) = ((x0 / cell) as usize, (((x0 + w) / cell) as usize).min(n));
        let (i0, i1) = ((y0 / cell) as usize, (((y0 + h) / cell) as usize).min(n));
        let fits = (i0..i1).all(|i| (j0..j1).all(|j| clearance[i * n + j] >= OBSTACLE_CLEARANCE_M));
        if fits {
            for i in i0..i1 {
                for j in j0..j1 {
                    let k = i * n + j;
                    height[k] = f64::max(height[k], z);
                }
            }
        }
    }
    height
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_validation() {
        assert_eq!(grid_dim(32.0, 0.5).unwrap(), 64);
        assert!(matches!(grid_dim(32.0, 0.3), Err(Error::Config(_))));
        assert!(matches!(grid_dim(32.0, 0.0), Err(Error::Config(_))));
        let spec = WorldSpec {
            branch_prob: 1.5,
            ..WorldSpec::default()
        };
        assert!(matches!(generate_world(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn resample_spacing() {
        let pts = resample(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]], 0.25);
        assert_eq!(pts.len(), 9);
        assert!((pts[4][0] - 1.0).abs() < 1e-12 && pts[4][1].abs() < 1e-12);
    }
}
