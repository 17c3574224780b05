mod common;

use common::states::random_state;
use wm_core::bevgrid::{Role, StateTensor};
use wm_core::harness::eval::{mean_best, region_report, Overlaps};
use wm_core::harness::*;
use wm_core::tensornet::Tensor;

fn road_state(n: usize, road: &[usize]) -> StateTensor<f64> {
    let cells = n * n;
    let mut data = vec![0.0; 3 * cells];
    for &k in road {
        data[k] = 1.0;
    }
    data[2 * cells..].fill(1.0);
    StateTensor::from_tensor(Tensor::from_vec(&[3, n, n], data).unwrap(), Role::Full).unwrap()
}

#[test]
fn iou_hand_example() {
    let a = road_state(4, &[0, 1]);
    let b = road_state(4, &[1, 2]);
    let all = vec![true; 16];
    assert!((iou(&a, &b, &all).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(iou(&a, &a, &all).unwrap(), 1.0);
    assert_eq!(iou(&a, &road_state(4, &[5]), &all).unwrap(), 0.0);
    let mut region = vec![false; 16];
    region[9] = true;
    assert_eq!(iou(&a, &b, &region).unwrap(), 1.0);
}

#[test]
fn iou_rejects_bad_regions() {
    let a = road_state(4, &[0]);
    assert_eq!(iou(&a, &a, &[false; 16]).unwrap_err().exit_code(), 3);
    assert_eq!(iou(&a, &a, &[true; 9]).unwrap_err().exit_code(), 3);
    assert_eq!(iou(&a, &road_state(3, &[0]), &[true; 16]).unwrap_err().exit_code(), 3);
}

#[test]
fn regions_follow_masks() {
    let full = random_state(8, 0.7, 1, Role::Full);
    let past = random_state(8, 0.0, 2, Role::Past);
    let all = region_all(&full);
    assert_eq!(all, (0..64).map(|k| full.observed(k)).collect::<Vec<_>>());
    assert_eq!(region_unobserved(&past, &full), all);
    assert!(!region_unobserved(&full, &full).iter().any(|&r| r));
}

#[test]
fn best_of_n_is_monotone_and_mean_is_prefix_mean() {
    let v = [0.3, 0.1, 0.7, 0.2];
    assert_eq!(mean_best(&v, 1), (0.3, 0.3));
    assert_eq!(mean_best(&v, 2), (0.2, 0.3));
    assert_eq!(mean_best(&v, 4), (0.325, 0.7));
    let bests: Vec<f64> = (1..=4).map(|n| mean_best(&v, n).1).collect();
    assert!(bests.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn gap_closing_examples() {
    assert_eq!(gap_closing(0.5, 0.75), 0.5);
    assert_eq!(gap_closing(0.6, 0.6), 0.0);
    assert_eq!(gap_closing(1.0, 1.0), 0.0);
}

#[test]
fn region_report_curves() {
    let worlds = vec![Overlaps(vec![(1, 2), (2, 2)]), Overlaps(vec![(0, 4), (1, 4)])];
    let r = region_report(&worlds, &[1, 2]);
    assert_eq!(r.worlds, 2);
    let p = &r.per_sample;
    assert_eq!((p[0].mean, p[0].best), (0.25, 0.25));
    assert_eq!((p[1].mean, p[1].best), ((0.75 + 0.125) / 2.0, 0.625));
    assert!((p[1].gap_closing - 0.5).abs() < 1e-15);
    let q = &r.pooled;
    assert_eq!((q[0].mean, q[1].mean), (1.0 / 6.0, 4.0 / 12.0));
    assert_eq!(q[1].best, 3.0 / 6.0);
}

#[test]
fn replay_evicts_oldest_first() {
    let mut r = ReplayBuffer::new(3).unwrap();
    for i in 0..5 {
        r.push(i);
    }
    assert_eq!(r.iter().copied().collect::<Vec<_>>(), vec![2, 3, 4]);
    assert_eq!((r.len(), r.capacity(), r.inserted()), (3, 3, 5));
}

#[test]
fn replay_errors() {
    assert_eq!(ReplayBuffer::<u8>::new(0).unwrap_err().exit_code(), 2);
    let r = ReplayBuffer::<u8>::new(2).unwrap();
    assert_eq!(r.sample_batch(1, 0).unwrap_err().exit_code(), 5);
}

#[test]
fn replay_sampling_is_uniform_and_seeded() {
    let mut r = ReplayBuffer::new(10).unwrap();
    for i in 0..10 {
        r.push(i);
    }
    let draws = r.sample_indices(20_000, 3).unwrap();
    assert_eq!(draws, r.sample_indices(20_000, 3).unwrap());
    let mut counts = [0f64; 10];
    for d in draws {
        counts[d] += 1.0;
    }
    let chi2: f64 = counts.iter().map(|c| (c - 2000.0).powi(2) / 2000.0).sum();
    // 9 degrees of freedom, p = 0.001
    assert!(chi2 < 27.88, "chi2 {chi2}");
}

#[test]
fn traversal_samples_split_where_configured() {
    let cfg = TraversalConfig::default();
    let s = build_sample(&cfg, 5, wm_core::synthworld::LayoutKind::StochasticBranch).unwrap();
    s.x_past.validate().unwrap();
    s.x_full.validate().unwrap();
    assert!(s.x_past.observed_count() < s.x_full.observed_count());
    for k in 0..s.x_past.cells() {
        assert!(!s.x_past.observed(k) || s.x_full.observed(k));
    }
    let b = s.branch.expect("branch world");
    let cells = branch_cells(&s, cfg.geometry).unwrap();
    assert!(!cells.is_empty());
    // the branch lies beyond the past horizon
    assert!(cells.iter().all(|&k| !s.x_past.observed(k)));
    let _ = b.continues;
}

#[test]
fn experiment_config_validation() {
    assert!(ExperimentConfig::default().validate().is_ok());
    assert!(ExperimentConfig::smoke().validate().is_ok());
    let bad = ExperimentConfig {
        n_values: vec![2, 4],
        ..ExperimentConfig::smoke()
    };
    assert_eq!(bad.validate().unwrap_err().exit_code(), 2);
    let json = serde_json::to_string(&ExperimentConfig::smoke()).unwrap();
    let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, ExperimentConfig::smoke());
}
