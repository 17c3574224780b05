mod common;

use common::worlds::flat_world;
use proptest::prelude::*;
use wm_core::sensim::{
    march_ray, plan_trajectory, simulate, sweep, sweep_world, AgentPose, Frame, SemanticPointCloud, SweepConfig,
    TrajectoryOpts, CLASS_ROAD, MAX_STEP_M,
};
use wm_core::synthworld::{generate_world, LayoutKind, WorldSpec};
use wm_core::Error;

fn cfg(rays: usize, range: f64) -> SweepConfig {
    SweepConfig {
        rays,
        max_range: range,
        ..SweepConfig::default()
    }
}

fn world(seed: u64, kind: LayoutKind) -> wm_core::synthworld::CompleteWorld {
    generate_world(&WorldSpec {
        seed,
        layout_kind: kind,
        ..WorldSpec::default()
    })
    .unwrap()
}

#[test]
fn open_world_rays_reach_max_range() {
    let w = flat_world(64, 0.5, true);
    let pose = AgentPose::new(16.1, 15.9, 0.3);
    let c = cfg(64, 8.0);
    for az in c.azimuths() {
        let samples = march_ray(&w, &pose, az, &c);
        let last = samples.last().unwrap().0;
        assert!((last - 8.0).abs() < 1e-9, "azimuth {az}: {last}");
    }
    let cloud = sweep(&w, &pose, &c, 1).unwrap();
    assert!(!cloud.is_empty());
    assert!(cloud
        .points
        .iter()
        .all(|p| p.class_id == CLASS_ROAD && p.intensity.is_finite()));
}

#[test]
fn wall_at_five_meters_blocks_azimuth_zero() {
    let mut w = flat_world(32, 0.5, true);
    // wall occupies x in [9.0, 9.5) across the whole world
    for i in 0..32 {
        let k = i * 32 + 18;
        w.obstacle_height[k] = 10.0;
        w.semantic[k] = 0;
    }
    let pose = AgentPose::new(4.0, 8.1, 0.0);
    let c = cfg(8, 12.0);
    let samples = march_ray(&w, &pose, 0.0, &c);
    assert!(!samples.is_empty());
    assert!(samples.iter().all(|&(d, _)| d < 5.0));
    let cloud = sweep_world(&w, &pose, &c, 0).unwrap();
    assert!(cloud.points.iter().all(|p| p.x < 9.0));
    // a wall lower than the sensor does not occlude
    for h in w.obstacle_height.iter_mut().filter(|h| **h > 0.0) {
        *h = 1.0;
    }
    let last = march_ray(&w, &pose, 0.0, &c).last().unwrap().0;
    assert!(last > 5.0);
}

#[test]
fn eight_rays_are_45_degrees_apart() {
    let az: Vec<f64> = cfg(8, 1.0).azimuths().iter().map(|a| a.to_degrees()).collect();
    for (k, a) in az.iter().enumerate() {
        assert!((a - 45.0 * k as f64).abs() < 1e-9);
    }
}

#[test]
fn sweep_preconditions() {
    let w = flat_world(16, 0.5, true);
    let pose = AgentPose::new(4.0, 4.0, 0.0);
    assert!(matches!(sweep(&w, &pose, &cfg(4, 8.0), 0), Err(Error::Config(_))));
    assert!(matches!(sweep(&w, &pose, &cfg(8, 0.0), 0), Err(Error::Config(_))));
    let outside = AgentPose::new(-1.0, 4.0, 0.0);
    assert!(matches!(sweep(&w, &outside, &cfg(8, 8.0), 0), Err(Error::Domain(_))));
}

#[test]
fn label_noise_flips_classes() {
    let w = flat_world(64, 0.5, true);
    let pose = AgentPose::new(16.0, 16.0, 0.0);
    let c = SweepConfig {
        label_noise: 0.3,
        ..cfg(90, 8.0)
    };
    let cloud = sweep(&w, &pose, &c, 9).unwrap();
    let flipped = cloud.points.iter().filter(|p| !p.is_road()).count() as f64 / cloud.len() as f64;
    assert!((0.2..0.4).contains(&flipped), "{flipped}");
    assert!(cloud.points.iter().all(|p| p.is_road() == p.intensity.is_finite()));
}

#[test]
fn straight_trajectory_is_monotone_along_axis() {
    let w = world(4, LayoutKind::Straight);
    let poses = plan_trajectory(&w, 60, 1, &TrajectoryOpts::default()).unwrap();
    assert_eq!(poses.len(), 60);
    for p in poses.windows(2) {
        assert!(p[1].x >= p[0].x);
    }
}

#[test]
fn trajectory_contract() {
    for kind in LayoutKind::ALL {
        let w = world(8, kind);
        let opts = TrajectoryOpts {
            lateral_m: 0.5,
            ..TrajectoryOpts::default()
        };
        assert_eq!(plan_trajectory(&w, 2, 3, &opts).unwrap().len(), 2);
        let a = plan_trajectory(&w, 40, 3, &opts).unwrap();
        assert_eq!(a, plan_trajectory(&w, 40, 3, &opts).unwrap());
        for p in &a {
            assert!(w.is_road(w.cell_at(p.x, p.y).unwrap()));
            assert!(p.yaw > -std::f64::consts::PI && p.yaw <= std::f64::consts::PI);
        }
        for p in a.windows(2) {
            assert!(((p[1].x - p[0].x).powi(2) + (p[1].y - p[0].y).powi(2)).sqrt() <= MAX_STEP_M);
        }
    }
    let w = world(8, LayoutKind::Straight);
    assert!(plan_trajectory(&w, 1, 0, &TrajectoryOpts::default()).is_err());
    assert!(matches!(
        plan_trajectory(&flat_world(16, 0.5, false), 5, 0, &TrajectoryOpts::default()),
        Err(Error::Generation(_))
    ));
}

#[test]
fn spc1_file_roundtrip() {
    let w = world(2, LayoutKind::Curve);
    let poses = plan_trajectory(&w, 3, 0, &TrajectoryOpts::default()).unwrap();
    let sweeps = simulate(&w, &poses, &SweepConfig::default(), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.spc");
    sweeps[1].save_spc1(&path).unwrap();
    let back = SemanticPointCloud::load_spc1(&path, Frame::Sensor).unwrap();
    assert_eq!(back.len(), sweeps[1].len());
    for (a, b) in back.points.iter().zip(&sweeps[1].points) {
        assert_eq!(a.x, b.x as f32 as f64);
        assert_eq!(a.class_id, b.class_id);
    }
    assert!(matches!(
        SemanticPointCloud::from_spc1(b"SPC0\0\0\0\0", Frame::Sensor),
        Err(Error::Format(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn points_carry_true_cell_class(seed in 0u64..10_000, k in 0usize..5, step in 0usize..30) {
        let w = world(seed, LayoutKind::ALL[k]);
        let poses = plan_trajectory(&w, step + 2, seed, &TrajectoryOpts::default()).unwrap();
        let cloud = sweep_world(&w, &poses[step], &SweepConfig::default(), seed).unwrap();
        prop_assert!(!cloud.is_empty());
        for p in &cloud.points {
            let idx = w.cell_at(p.x, p.y).unwrap();
            prop_assert_eq!(p.is_road(), w.is_road(idx));
            if p.is_road() {
                prop_assert_eq!(p.intensity, w.intensity[idx]);
            }
        }
    }

    #[test]
    fn raising_obstacles_never_adds_points(seed in 0u64..10_000, frac in 0.0f64..0.3, extra in 0.0f64..10.0) {
        let w = world(seed, LayoutKind::Crossroad);
        let pose = plan_trajectory(&w, 20, seed, &TrajectoryOpts::default()).unwrap()[10];
        let c = cfg(180, 12.0);
        let before = sweep(&w, &pose, &c, 0).unwrap().len();
        let mut raised = w.clone();
        let n = raised.obstacle_height.len();
        for i in 0..n {
            if !raised.is_road(i) && wm_core::rng::hash_unit(seed, i as u64, 0) < frac {
                raised.obstacle_height[i] += extra;
            }
        }
        prop_assert!(sweep(&raised, &pose, &c, 0).unwrap().len() <= before);
    }

    #[test]
    fn sensor_and_world_frames_agree(seed in 0u64..10_000, x in 3.0f64..29.0, y in 3.0f64..29.0, yaw in -3.0f64..3.0) {
        let w = world(seed, LayoutKind::TIntersection);
        let pose = AgentPose::new(x, y, yaw);
        let c = cfg(72, 10.0);
        let ws = sweep_world(&w, &pose, &c, seed).unwrap();
        let back = sweep(&w, &pose, &c, seed).unwrap().to_world(&pose);
        prop_assert_eq!(ws.len(), back.len());
        for (a, b) in ws.points.iter().zip(&back.points) {
            prop_assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
        }
    }
}
