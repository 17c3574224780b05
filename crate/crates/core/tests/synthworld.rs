mod common;

use common::worlds::{components, flat_world};
use proptest::prelude::*;
use wm_core::pnm::{grid_from_gray, quantize, Image};
use wm_core::synthworld::{generate_world, render_world, LayoutKind, RenderChannel, WorldSpec};
use wm_core::Error;

fn spec(seed: u64, kind: LayoutKind) -> WorldSpec {
    WorldSpec {
        seed,
        layout_kind: kind,
        ..WorldSpec::default()
    }
}

#[test]
fn same_spec_gives_identical_world() {
    for kind in LayoutKind::ALL {
        let a = generate_world(&spec(11, kind)).unwrap();
        let b = generate_world(&spec(11, kind)).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a.intensity.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.intensity.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

#[test]
fn straight_six_meter_road_is_twelve_cells_wide() {
    for seed in 0..5 {
        let s = WorldSpec {
            road_width_range: (6.0, 6.0),
            ..spec(seed, LayoutKind::Straight)
        };
        let w = generate_world(&s).unwrap();
        let n = w.size;
        assert_eq!(n, 64);
        for j in 0..n {
            let count = (0..n).filter(|&i| w.semantic[i * n + j] == 1).count();
            assert_eq!(count, 12, "seed {seed} column {j}");
        }
    }
}

#[test]
fn branch_frequency_matches_probability() {
    let mut continues = 0;
    for seed in 0..1000 {
        let w = generate_world(&spec(seed, LayoutKind::StochasticBranch)).unwrap();
        if w.meta.branch.unwrap().continues {
            continues += 1;
        }
    }
    let f = continues as f64 / 1000.0;
    assert!((0.45..=0.55).contains(&f), "frequency {f}");
}

#[test]
fn branch_probability_extremes() {
    for (p, expect) in [(0.0, false), (1.0, true)] {
        for seed in 0..20 {
            let s = WorldSpec {
                branch_prob: p,
                ..spec(seed, LayoutKind::StochasticBranch)
            };
            assert_eq!(generate_world(&s).unwrap().meta.branch.unwrap().continues, expect);
        }
    }
}

#[test]
fn invalid_specs_are_config_errors() {
    let bad = [
        WorldSpec {
            cell_m: 0.3,
            ..WorldSpec::default()
        },
        WorldSpec {
            cell_m: 0.0,
            ..WorldSpec::default()
        },
        WorldSpec {
            extent_m: -4.0,
            ..WorldSpec::default()
        },
        WorldSpec {
            branch_prob: 1.5,
            ..WorldSpec::default()
        },
        WorldSpec {
            road_width_range: (6.0, 4.0),
            ..WorldSpec::default()
        },
    ];
    for s in bad {
        assert!(matches!(generate_world(&s), Err(Error::Config(_))), "{s:?}");
    }
}

#[test]
fn flat_worlds_render_white_and_black() {
    let dir = tempfile::tempdir().unwrap();
    for (road, value) in [(true, 255u8), (false, 0u8)] {
        let path = dir.path().join(format!("{road}.pgm"));
        render_world(&flat_world(16, 0.5, road), RenderChannel::Semantic, &path).unwrap();
        let img = Image::load(&path).unwrap();
        assert_eq!(img.channels, 1);
        assert!(img.data.iter().all(|&v| v == value));
    }
}

#[test]
fn render_roundtrip_within_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let w = generate_world(&spec(3, LayoutKind::Crossroad)).unwrap();
    for (channel, values) in [
        (
            RenderChannel::Semantic,
            w.semantic.iter().map(|&s| s as f64).collect::<Vec<_>>(),
        ),
        (RenderChannel::Intensity, w.intensity.clone()),
    ] {
        let path = dir.path().join("c.pgm");
        render_world(&w, channel, &path).unwrap();
        let back = grid_from_gray(&Image::load(&path).unwrap());
        for (a, b) in values.iter().zip(&back) {
            assert_eq!(quantize(*a) as f64 / 255.0, *b);
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
    let path = dir.path().join("c.ppm");
    render_world(&w, RenderChannel::Composite, &path).unwrap();
    assert_eq!(Image::load(&path).unwrap().channels, 3);
}

#[test]
fn unwritable_path_is_io_error() {
    let w = flat_world(8, 0.5, true);
    let r = render_world(
        &w,
        RenderChannel::Semantic,
        std::path::Path::new("/nonexistent/dir/x.pgm"),
    );
    assert!(matches!(r, Err(Error::Io(_))));
}

#[test]
fn archive_has_all_files() {
    let dir = tempfile::tempdir().unwrap();
    let w = generate_world(&spec(5, LayoutKind::StochasticBranch)).unwrap();
    w.save_archive(dir.path()).unwrap();
    for f in [
        "semantic.pgm",
        "intensity.pgm",
        "composite.ppm",
        "world.json",
        "world.pwg",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let meta: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("world.json")).unwrap()).unwrap();
    assert_eq!(meta["spec"]["layout_kind"], "stochastic_branch");
    assert!(meta["branch"]["continues"].is_boolean());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn world_invariants(seed in any::<u64>(), k in 0usize..5) {
        let w = generate_world(&spec(seed, LayoutKind::ALL[k])).unwrap();
        let n = w.size;
        let f = w.road_fraction();
        prop_assert!((0.05..=0.60).contains(&f), "road fraction {}", f);
        let road: Vec<bool> = w.semantic.iter().map(|&s| s == 1).collect();
        prop_assert_eq!(components(n, &road), 1);
        for c in 0..n * n {
            prop_assert!(w.obstacle_height[c] >= 0.0);
            prop_assert!(!(road[c] && w.obstacle_height[c] > 0.0));
            if road[c] {
                prop_assert!((0.0..=1.0).contains(&w.intensity[c]));
            }
        }
    }
}
