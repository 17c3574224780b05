//! End-to-end run: data, stage one, pseudo-complete corpus, stage two, evaluation.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::{branch_cells, build_sample, TraversalConfig, TraversalSample};
use super::eval::{overlap, region_all, region_report, region_unobserved, Overlaps, SetReport, WorldRecord};
use super::replay::ReplayBuffer;
use crate::augment::{augment_pair, AugmentSpec};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::statecomplete::{
    make_pseudo_full, train_completion, AdvConfig, AdvModel, CompletionTrainConfig, SlvmConfig, SlvmModel,
};
use crate::synthworld::LayoutKind;
use crate::tensornet::ParameterStore;
use crate::worldmodel::{keep_observed, predict, train_step, HvaeConfig, HvaeModel, WmTrainConfig};
use crate::State32;

/// Seed-derivation indices of the independent parts of a run.
mod part {
    pub const TRAIN_WORLDS: u64 = 1;
    pub const TEST_WORLDS: u64 = 2;
    pub const BRANCH_WORLDS: u64 = 3;
    pub const SLVM_INIT: u64 = 4;
    pub const ADV_INIT: u64 = 5;
    pub const STAGE1: u64 = 6;
    pub const PSEUDO: u64 = 7;
    pub const HVAE_INIT: u64 = 8;
    pub const STAGE2: u64 = 9;
    pub const EVAL: u64 = 10;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub traversal: TraversalConfig,
    pub train_worlds: usize,
    /// Held-out worlds cycling through `layouts`.
    pub test_worlds: usize,
    /// Additional held-out stochastic-branch worlds.
    pub branch_test_worlds: usize,
    pub layouts: Vec<LayoutKind>,
    pub augment: AugmentSpec,
    pub slvm: SlvmConfig,
    pub adv: AdvConfig,
    pub completion: CompletionTrainConfig,
    pub hvae: HvaeConfig,
    pub wm: WmTrainConfig,
    pub replay_capacity: usize,
    /// Stage-two pairs per training world: the first unaugmented, the rest
    /// augmented before completion so every target stays complete.
    pub pseudo_copies: usize,
    pub n_values: Vec<usize>,
    /// Predictions keep the observed cells of `x_past` verbatim.
    pub keep_observed: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let augment = AugmentSpec {
            max_rotation: 10.0,
            max_translation: 3.0,
            warp_amplitude: 1.0,
            ..AugmentSpec::default()
        };
        ExperimentConfig {
            seed: 0,
            traversal: TraversalConfig::default(),
            train_worlds: 500,
            test_worlds: 100,
            branch_test_worlds: 300,
            layouts: LayoutKind::ALL.to_vec(),
            augment: augment.clone(),
            slvm: SlvmConfig::default(),
            adv: AdvConfig::default(),
            completion: CompletionTrainConfig {
                augment: AugmentSpec {
                    max_rotation: 180.0,
                    max_translation: 8.0,
                    ..augment
                },
                ..CompletionTrainConfig::default()
            },
            hvae: HvaeConfig::default(),
            wm: WmTrainConfig::default(),
            replay_capacity: 2000,
            pseudo_copies: 4,
            n_values: vec![1, 2, 4, 8, 16, 32],
            keep_observed: true,
        }
    }
}

impl ExperimentConfig {
    /// Ten training worlds and 200 steps per stage: exercises every stage quickly.
    pub fn smoke() -> Self {
        let d = Self::default();
        ExperimentConfig {
            train_worlds: 10,
            test_worlds: 5,
            branch_test_worlds: 4,
            completion: CompletionTrainConfig {
                steps: 200,
                batch: 2,
                adv_batch: 1,
                ..d.completion.clone()
            },
            wm: WmTrainConfig {
                steps: 200,
                batch: 2,
                ..d.wm.clone()
            },
            replay_capacity: 20,
            pseudo_copies: 2,
            n_values: vec![1, 2, 4],
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.traversal.validate()?;
        self.slvm.validate()?;
        self.adv.validate()?;
        self.hvae.validate()?;
        self.augment.validate()?;
        let n = self.traversal.geometry.dim()?;
        if self.slvm.size != n || self.adv.size != n || self.hvae.size != n {
            return Err(Error::config(format!("model sizes must match the {n}x{n} grid")));
        }
        if self.train_worlds == 0 || self.test_worlds + self.branch_test_worlds == 0 {
            return Err(Error::config("need training worlds and held-out worlds"));
        }
        if self.layouts.is_empty() {
            return Err(Error::config("layouts must not be empty"));
        }
        if self.n_values.first() != Some(&1) || !self.n_values.is_sorted() {
            return Err(Error::config("n_values must start at 1 and ascend"));
        }
        if self.pseudo_copies == 0 {
            return Err(Error::config("pseudo_copies must be positive"));
        }
        if self.wm.batch == 0 || self.wm.steps == 0 {
            return Err(Error::config("stage-two steps and batch must be positive"));
        }
        Ok(())
    }

    fn seeds(&self, part: u64, count: usize) -> Vec<u64> {
        let base = derive_seed(self.seed, part);
        (0..count as u64).map(|i| derive_seed(base, i)).collect()
    }

    fn layout(&self, i: usize) -> LayoutKind {
        self.layouts[i % self.layouts.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ExperimentConfig,
    pub n_values: Vec<usize>,
    /// Held-out worlds of every layout.
    pub test: SetReport,
    /// Held-out stochastic-branch worlds.
    pub branch: SetReport,
}

fn stage<R>(name: &'static str, f: impl FnOnce() -> Result<R>) -> Result<R> {
    log::info!("stage {name}");
    f().map_err(|e| e.in_stage(name))
}

fn write_jsonl<S: Serialize>(file: &mut Option<fs::File>, item: &S) -> Result<()> {
    if let Some(f) = file {
        serde_json::to_writer(&mut *f, item)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

fn create(dir: Option<&Path>, name: &str) -> Result<Option<fs::File>> {
    dir.map(|d| fs::File::create(d.join(name)).map_err(Error::from))
        .transpose()
}

/// `n` predicted complete states for `x_past`.
pub fn sample_worlds(
    cfg: &ExperimentConfig,
    model: &HvaeModel<f32>,
    x_past: &State32,
    n: usize,
    seed: u64,
) -> Result<Vec<State32>> {
    let mut preds = predict(model, x_past, n, seed)?;
    if cfg.keep_observed {
        for p in &mut preds {
            keep_observed(p, x_past)?;
        }
    }
    Ok(preds)
}

/// Evaluates one held-out world against its `x_full`.
pub fn evaluate_world(
    cfg: &ExperimentConfig,
    model: &HvaeModel<f32>,
    sample: &TraversalSample,
    seed: u64,
) -> Result<(WorldRecord, Overlaps, Option<Overlaps>)> {
    let max_n = *cfg.n_values.last().expect("validated");
    let geometry = cfg.traversal.geometry;
    let preds = sample_worlds(cfg, model, &sample.x_past, max_n, seed)?;
    let all = region_all(&sample.x_full);
    let unobs = region_unobserved(&sample.x_past, &sample.x_full);
    let o_all = Overlaps(
        preds
            .iter()
            .map(|p| overlap(p, &sample.x_full, &all))
            .collect::<Result<_>>()?,
    );
    let o_unobs = if unobs.iter().any(|&r| r) {
        Some(Overlaps(
            preds
                .iter()
                .map(|p| overlap(p, &sample.x_full, &unobs))
                .collect::<Result<_>>()?,
        ))
    } else {
        None
    };
    let corridor: Vec<usize> = branch_cells(sample, geometry)?
        .into_iter()
        .filter(|&k| sample.x_full.observed(k))
        .collect();
    let branch_samples = (!corridor.is_empty()).then(|| {
        preds
            .iter()
            .map(|p| {
                let road = corridor.iter().filter(|&&k| p.road()[k] >= 0.5).count();
                2 * road >= corridor.len()
            })
            .collect()
    });
    let record = WorldRecord {
        seed: sample.seed,
        layout: sample.layout,
        iou_all: o_all.ious(),
        iou_unobserved: o_unobs.as_ref().map(Overlaps::ious),
        branch_truth: sample.branch.map(|b| b.continues),
        branch_samples,
    };
    Ok((record, o_all, o_unobs))
}

fn evaluate_set(model: &HvaeModel<f32>, samples: &[TraversalSample], cfg: &ExperimentConfig) -> Result<SetReport> {
    let eval_base = derive_seed(cfg.seed, part::EVAL);
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(samples.len().max(1));
    let chunk = samples.len().div_ceil(threads).max(1);
    let results: Vec<Result<Vec<_>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|s| evaluate_world(cfg, model, s, derive_seed(eval_base, s.seed)))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation thread panicked"))
            .collect()
    });
    let (mut records, mut all, mut unobs) = (Vec::new(), Vec::new(), Vec::new());
    for r in results {
        for (rec, a, u) in r? {
            records.push(rec);
            all.push(a);
            unobs.extend(u);
        }
    }
    let branch: Vec<&Vec<bool>> = records.iter().filter_map(|r| r.branch_samples.as_ref()).collect();
    let both_outcomes_fraction = (!branch.is_empty()).then(|| {
        let both = branch
            .iter()
            .filter(|v| v.iter().any(|&b| b) && v.iter().any(|&b| !b))
            .count();
        both as f64 / branch.len() as f64
    });
    Ok(SetReport {
        worlds: samples.len(),
        all: region_report(&all, &cfg.n_values),
        unobserved: region_report(&unobs, &cfg.n_values),
        both_outcomes_fraction,
        records,
    })
}

fn build_set(
    cfg: &ExperimentConfig,
    seeds: &[u64],
    layout: impl Fn(usize) -> LayoutKind,
) -> Result<Vec<TraversalSample>> {
    seeds
        .iter()
        .enumerate()
        .map(|(i, &s)| build_sample(&cfg.traversal, s, layout(i)))
        .collect()
}

fn check_disjoint(cfg: &ExperimentConfig) -> Result<()> {
    let train: HashSet<u64> = cfg.seeds(part::TRAIN_WORLDS, cfg.train_worlds).into_iter().collect();
    let held: Vec<u64> = cfg
        .seeds(part::TEST_WORLDS, cfg.test_worlds)
        .into_iter()
        .chain(cfg.seeds(part::BRANCH_WORLDS, cfg.branch_test_worlds))
        .collect();
    let unique: HashSet<u64> = held.iter().copied().collect();
    if unique.len() != held.len() || !train.is_disjoint(&unique) {
        return Err(Error::state("held-out world seeds overlap the training seeds"));
    }
    Ok(())
}

/// Training traversals, layouts cycling through `cfg.layouts`.
pub fn training_samples(cfg: &ExperimentConfig) -> Result<Vec<TraversalSample>> {
    check_disjoint(cfg)?;
    build_set(cfg, &cfg.seeds(part::TRAIN_WORLDS, cfg.train_worlds), |i| cfg.layout(i))
}

/// Held-out traversals: `(mixed layouts, stochastic branch only)`.
pub fn held_out_samples(cfg: &ExperimentConfig) -> Result<(Vec<TraversalSample>, Vec<TraversalSample>)> {
    check_disjoint(cfg)?;
    Ok((
        build_set(cfg, &cfg.seeds(part::TEST_WORLDS, cfg.test_worlds), |i| cfg.layout(i))?,
        build_set(cfg, &cfg.seeds(part::BRANCH_WORLDS, cfg.branch_test_worlds), |_| {
            LayoutKind::StochasticBranch
        })?,
    ))
}

/// Stage one on `(x_past, x_full)` pairs. With `run_dir`, writes the metrics
/// log and checkpoints `slvm.wmck`, `adv_gen.wmck`, `adv_disc.wmck`.
pub fn train_stage_one(
    cfg: &ExperimentConfig,
    pairs: &[(State32, State32)],
    run_dir: Option<&Path>,
) -> Result<(SlvmModel<f32>, AdvModel<f32>)> {
    let mut slvm = SlvmModel::<f32>::new(cfg.slvm.clone(), derive_seed(cfg.seed, part::SLVM_INIT))?;
    let mut adv = AdvModel::<f32>::new(cfg.adv.clone(), derive_seed(cfg.seed, part::ADV_INIT))?;
    let tc = CompletionTrainConfig {
        seed: derive_seed(cfg.seed, part::STAGE1),
        ..cfg.completion.clone()
    };
    let mut log = create(run_dir, "completion_metrics.jsonl")?;
    train_completion(&mut slvm, &mut adv, pairs, &tc, |m| {
        if m.step % 100 == 0 {
            log::info!(
                "stage one step {} L_struct {:.4} L_kl {:.4}",
                m.step,
                m.l_struct,
                m.l_kl
            );
        }
        write_jsonl(&mut log, m)
    })?;
    if let Some(d) = run_dir {
        slvm.store.save_checkpoint(d.join(SLVM_CKPT))?;
        adv.gen.save_checkpoint(d.join(ADV_GEN_CKPT))?;
        adv.disc.save_checkpoint(d.join(ADV_DISC_CKPT))?;
    }
    Ok((slvm, adv))
}

pub const SLVM_CKPT: &str = "slvm.wmck";
pub const ADV_GEN_CKPT: &str = "adv_gen.wmck";
pub const ADV_DISC_CKPT: &str = "adv_disc.wmck";
pub const WM_CKPT: &str = "wm.wmck";

/// Stage-one models restored from the checkpoints [`train_stage_one`] writes.
pub fn load_stage_one(cfg: &ExperimentConfig, dir: &Path) -> Result<(SlvmModel<f32>, AdvModel<f32>)> {
    let mut slvm = SlvmModel::<f32>::new(cfg.slvm.clone(), 0)?;
    slvm.store
        .load_values_from(&ParameterStore::load_checkpoint(dir.join(SLVM_CKPT))?)?;
    let mut adv = AdvModel::<f32>::new(cfg.adv.clone(), 0)?;
    adv.gen
        .load_values_from(&ParameterStore::load_checkpoint(dir.join(ADV_GEN_CKPT))?)?;
    adv.disc
        .load_values_from(&ParameterStore::load_checkpoint(dir.join(ADV_DISC_CKPT))?)?;
    Ok((slvm, adv))
}

pub fn load_world_model(cfg: &ExperimentConfig, path: &Path) -> Result<HvaeModel<f32>> {
    let mut model = HvaeModel::<f32>::new(cfg.hvae.clone(), 0)?;
    model.store.load_values_from(&ParameterStore::load_checkpoint(path)?)?;
    Ok(model)
}

/// The stage-two corpus: `pseudo_copies` pairs per training pair, each a
/// (possibly augmented) `x_past` with the pseudo-complete state of the
/// equally augmented `x_full`.
pub fn pseudo_corpus(
    cfg: &ExperimentConfig,
    slvm: &SlvmModel<f32>,
    adv: &AdvModel<f32>,
    pairs: &[(State32, State32)],
    keys: &[u64],
) -> Result<ReplayBuffer<(State32, State32)>> {
    if keys.len() != pairs.len() {
        return Err(Error::domain(format!("{} keys for {} pairs", keys.len(), pairs.len())));
    }
    let mut replay = ReplayBuffer::new(cfg.replay_capacity)?;
    let base = derive_seed(cfg.seed, part::PSEUDO);
    for ((past, full), &key) in pairs.iter().zip(keys) {
        for copy in 0..cfg.pseudo_copies {
            let seed = derive_seed(derive_seed(base, key), copy as u64);
            let (p, f) = if copy == 0 {
                (past.clone(), full.clone())
            } else {
                let spec = AugmentSpec {
                    seed,
                    ..cfg.augment.clone()
                };
                augment_pair(past, full, &spec)?
            };
            let star = make_pseudo_full(slvm, adv, &f, seed)?;
            replay.push((p, star));
        }
    }
    Ok(replay)
}

/// Stage two over uniform draws from the replay buffer. With `run_dir`,
/// writes the metrics log and `wm.wmck`.
pub fn train_stage_two(
    cfg: &ExperimentConfig,
    replay: &ReplayBuffer<(State32, State32)>,
    run_dir: Option<&Path>,
) -> Result<HvaeModel<f32>> {
    let mut model = HvaeModel::<f32>::new(cfg.hvae.clone(), derive_seed(cfg.seed, part::HVAE_INIT))?;
    let base = derive_seed(cfg.seed, part::STAGE2);
    let mut log = create(run_dir, "wm_metrics.jsonl")?;
    for step in 0..cfg.wm.steps {
        let step_seed = derive_seed(base, step as u64);
        let picked = replay.sample_batch(cfg.wm.batch, step_seed)?;
        let refs: Vec<(&State32, &State32)> = picked.iter().map(|(p, s)| (p, s)).collect();
        let m = train_step(&mut model, &refs, &cfg.wm, step, step_seed)?;
        if step % 100 == 0 {
            log::info!(
                "stage two step {step} L_rec {:.1} L_kl {:.1} L_match {:.1}",
                m.l_rec,
                m.l_kl_hier,
                m.l_match
            );
        }
        write_jsonl(&mut log, &m)?;
    }
    if let Some(d) = run_dir {
        model.store.save_checkpoint(d.join(WM_CKPT))?;
    }
    Ok(model)
}

pub fn evaluate(
    cfg: &ExperimentConfig,
    model: &HvaeModel<f32>,
    test: &[TraversalSample],
    branch: &[TraversalSample],
) -> Result<EvalReport> {
    cfg.validate()?;
    Ok(EvalReport {
        config: cfg.clone(),
        n_values: cfg.n_values.clone(),
        test: evaluate_set(model, test, cfg)?,
        branch: evaluate_set(model, branch, cfg)?,
    })
}

fn save_examples(dir: &Path, stem: &str, states: &[(&str, &State32)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, s) in states {
        s.to_pwg().save(&dir.join(format!("{stem}_{name}.pwg")))?;
        s.render_road().save(&dir.join(format!("{stem}_{name}.pgm")))?;
    }
    Ok(())
}

/// Runs every stage. With `run_dir`, writes the config, metrics logs,
/// checkpoints, example states and `eval_report.json` there.
pub fn run_experiment(cfg: &ExperimentConfig, run_dir: Option<&Path>) -> Result<EvalReport> {
    stage("config", || {
        cfg.validate()?;
        if let Some(d) = run_dir {
            fs::create_dir_all(d)?;
            fs::write(d.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
        }
        Ok(())
    })?;
    let (train, (test, branch)) = stage("generate", || Ok((training_samples(cfg)?, held_out_samples(cfg)?)))?;
    let pairs: Vec<(State32, State32)> = train.iter().map(|s| (s.x_past.clone(), s.x_full.clone())).collect();
    let keys: Vec<u64> = train.iter().map(|s| s.seed).collect();
    let (slvm, adv) = stage("train-completion", || train_stage_one(cfg, &pairs, run_dir))?;
    let replay = stage("gen-pseudo", || {
        let replay = pseudo_corpus(cfg, &slvm, &adv, &pairs, &keys)?;
        if let Some(d) = run_dir {
            for (i, (past, star)) in replay.iter().step_by(cfg.pseudo_copies).take(8).enumerate() {
                save_examples(
                    &d.join("pseudo"),
                    &format!("{i:03}"),
                    &[("past", past), ("full", &pairs[i].1), ("star", star)],
                )?;
            }
        }
        Ok(replay)
    })?;
    let model = stage("train-wm", || train_stage_two(cfg, &replay, run_dir))?;
    stage("eval", || {
        let report = evaluate(cfg, &model, &test, &branch)?;
        if let Some(d) = run_dir {
            fs::write(d.join("eval_report.json"), report_json(&report)?)?;
            for (i, s) in test.iter().chain(&branch).take(8).enumerate() {
                let preds = sample_worlds(cfg, &model, &s.x_past, 4, derive_seed(cfg.seed, part::EVAL))?;
                let mut states = vec![("past", &s.x_past), ("full", &s.x_full)];
                let names = ["sample0", "sample1", "sample2", "sample3"];
                states.extend(names.iter().copied().zip(&preds));
                save_examples(&d.join("predictions"), &format!("{i:03}"), &states)?;
            }
        }
        Ok(report)
    })
}

/// The serialized form of a report (pretty JSON, fixed field order).
pub fn report_json(report: &EvalReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}
