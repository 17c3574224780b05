mod common;

use common::states::{random_state, restrict};
use proptest::prelude::*;
use wm_core::bevgrid::{Role, StateTensor};
use wm_core::rng::{normal_vec, rng_for};
use wm_core::statecomplete::*;
use wm_core::tensornet::{Graph, Tensor};

fn small_slvm(seed: u64) -> SlvmModel<f64> {
    let cfg = SlvmConfig {
        size: 16,
        z_dim: 4,
        widths: vec![4, 4],
        lambda_kl: 1e-2,
    };
    SlvmModel::new(cfg, seed).unwrap()
}

fn small_adv(seed: u64) -> AdvModel<f64> {
    let cfg = AdvConfig {
        size: 16,
        gen_widths: [4, 4],
        disc_width: 4,
        ..AdvConfig::default()
    };
    AdvModel::new(cfg, seed).unwrap()
}

fn struct_loss(x_hat: &[f64], targets: &[&StateTensor<f64>]) -> (f64, usize) {
    let n = targets[0].size();
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::from_vec(&[targets.len(), 2, n, n], x_hat.to_vec()).unwrap());
    let (l, skipped) = masked_struct_loss(&mut g, x, targets).unwrap();
    (g.item(l), skipped)
}

#[test]
fn struct_loss_hand_example() {
    // four observed road cells with intensity 0.5; prediction 0.5 everywhere:
    // each observed cell contributes 0.25 (road) + 0 (intensity), over 4 cells
    let n = 4;
    let mut data = vec![0.0; 3 * 16];
    for k in 0..16 {
        let obs = k < 4;
        data[k] = if obs { 1.0 } else { 0.5 };
        data[16 + k] = if obs { 0.5 } else { 0.0 };
        data[32 + k] = if obs { 1.0 } else { 0.0 };
    }
    let t = StateTensor::from_tensor(Tensor::from_vec(&[3, n, n], data).unwrap(), Role::Full).unwrap();
    let (l, skipped) = struct_loss(&vec![0.5; 32], &[&t]);
    assert_eq!(skipped, 0);
    assert!((l - 0.25).abs() < 1e-15, "{l}");
}

#[test]
fn struct_loss_skips_unobserved_samples() {
    let empty = random_state(4, 0.0, 1, Role::Full);
    let some = random_state(4, 0.5, 2, Role::Full);
    let (both, skipped) = struct_loss(&vec![0.3; 64], &[&empty, &some]);
    let (alone, _) = struct_loss(&vec![0.3; 32], &[&some]);
    assert_eq!(skipped, 1);
    assert_eq!(both, alone);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn struct_loss_ignores_unobserved_cells(seed in 0u64..1000, road in 0.0f64..1.0, inten in 0.0f64..1.0) {
        let t = random_state(8, 0.4, seed, Role::Full);
        let mut perturbed = t.clone();
        for k in (0..64).filter(|&k| !t.observed(k)) {
            perturbed.channel_mut(0)[k] = road;
            perturbed.channel_mut(1)[k] = inten;
        }
        let x_hat = normal_vec::<f64>(&mut rng_for(seed, 5), 128);
        prop_assert_eq!(struct_loss(&x_hat, &[&t]), struct_loss(&x_hat, &[&perturbed]));
    }

    #[test]
    fn pseudo_full_keeps_observed_cells(seed in 0u64..200) {
        let (slvm, adv) = (small_slvm(1), small_adv(2));
        let x_full = random_state(16, 0.5, seed, Role::Full);
        let star = make_pseudo_full(&slvm, &adv, &x_full, seed).unwrap();
        prop_assert_eq!(star.role, Role::PseudoFull);
        prop_assert_eq!(star.observed_count(), 256);
        star.validate().unwrap();
        for k in (0..256).filter(|&k| x_full.observed(k)) {
            prop_assert_eq!(star.road()[k].to_bits(), x_full.road()[k].to_bits());
            prop_assert_eq!(star.intensity()[k].to_bits(), x_full.intensity()[k].to_bits());
        }
    }
}

#[test]
fn pseudo_full_is_idempotent_on_complete_states() {
    let (slvm, adv) = (small_slvm(1), small_adv(2));
    let complete = random_state(16, 1.0, 9, Role::Full);
    let star = make_pseudo_full(&slvm, &adv, &complete, 3).unwrap();
    assert_eq!(star.data, complete.data);
    let again = make_pseudo_full(&slvm, &adv, &star, 4).unwrap();
    assert_eq!(again, star);
}

#[test]
fn slvm_complete_only_adds_structure() {
    let slvm = small_slvm(3);
    let x = random_state(16, 0.3, 4, Role::Full);
    let noise = normal_vec::<f64>(&mut rng_for(1, 1), 4);
    let out = slvm_complete(&slvm, &x, &noise).unwrap();
    out.validate().unwrap();
    let (road, _) = slvm_decode(&slvm, &x, &noise).unwrap();
    for k in 0..256 {
        if x.observed(k) {
            assert_eq!(out.road()[k], x.road()[k]);
            assert!(out.observed(k));
        } else if road[k] >= 0.5 {
            assert_eq!((out.road()[k], out.observed(k)), (1.0, true));
        } else {
            assert_eq!((out.road()[k], out.observed(k)), (0.5, false));
        }
    }
}

#[test]
fn slvm_complete_rejects_bad_noise() {
    let slvm = small_slvm(3);
    let x = random_state(16, 0.3, 4, Role::Full);
    let e = slvm_complete(&slvm, &x, &[0.0; 3]).unwrap_err();
    assert_eq!(e.exit_code(), 3);
}

#[test]
fn untrained_discriminator_losses_are_ln2() {
    // zeroing the last layer makes every logit 0, so BCE is ln 2 per cell
    let mut adv = small_adv(5);
    let out: Vec<String> = adv
        .disc
        .names()
        .filter(|n| n.starts_with("disc.out"))
        .map(String::from)
        .collect();
    assert!(!out.is_empty());
    for p in out {
        let v = adv.disc.value_mut(&p).unwrap();
        *v = v.map(|_| 0.0);
    }
    let full = random_state(16, 1.0, 6, Role::Full);
    let shown: Vec<bool> = (0..256).map(|k| k % 3 != 0).collect();
    let sample = AdvSample::from_state(&full, &shown);
    let mut g = Graph::<f64>::new();
    let intensity = g.constant(Tensor::from_vec(&[1, 1, 16, 16], full.intensity().to_vec()).unwrap());
    let logits = adv.discriminate(&mut g, &[&sample], intensity).unwrap();
    assert!(g.value(logits).data().iter().all(|&v| v == 0.0));
    let d = disc_loss(&mut g, logits, &[&sample]).unwrap();
    assert!((g.item(d) - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn completion_training_is_deterministic_and_finite() {
    let pairs: Vec<(StateTensor<f64>, StateTensor<f64>)> = (0..4)
        .map(|s| {
            let full = random_state(16, 0.8, s, Role::Full);
            let past = restrict(&full, |k| k % 16 < 8 && full.observed(k), Role::Past);
            (past, full)
        })
        .collect();
    let cfg = CompletionTrainConfig {
        steps: 3,
        batch: 2,
        adv_batch: 1,
        seed: 11,
        ..CompletionTrainConfig::default()
    };
    let run = || {
        let (mut s, mut a) = (small_slvm(1), small_adv(2));
        let mut log = Vec::new();
        train_completion(&mut s, &mut a, &pairs, &cfg, |m| {
            log.push(*m);
            Ok(())
        })
        .unwrap();
        (s.store.to_wmck().unwrap(), a.gen.to_wmck().unwrap(), log)
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(a.2.len(), 3);
    assert!(a
        .2
        .iter()
        .all(|m| m.l_struct.is_finite() && m.l_disc.is_finite() && m.l_gen.is_finite()));
}

#[test]
fn configs_validate() {
    let bad = SlvmConfig {
        size: 30,
        ..SlvmConfig::default()
    };
    assert_eq!(SlvmModel::<f32>::new(bad, 0).unwrap_err().exit_code(), 2);
    assert!(SlvmConfig::default().validate().is_ok());
    assert!(AdvConfig::default().validate().is_ok());
}
