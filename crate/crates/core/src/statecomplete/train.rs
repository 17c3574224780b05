//! Joint training loop of the two stage-one models.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::adv::{disc_loss, gen_loss, AdvModel, AdvSample};
use super::slvm::{slvm_loss, SlvmModel};
use crate::augment::{augment_pair, AugmentSpec};
use crate::bevgrid::StateTensor;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, normal_vec, rng_for, stream, Rng};
use crate::scalar::Scalar;
use crate::tensornet::{AdamConfig, Graph, ParameterStore, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompletionTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub grad_clip: f64,
    /// Samples of each batch used for the adversarial steps.
    pub adv_batch: usize,
    pub augment: AugmentSpec,
    /// Blobs of observed road hidden from the inpainter per training sample.
    pub holes: usize,
    /// Blob radius range in cells.
    pub hole_radius: (f64, f64),
    pub seed: u64,
}

impl Default for CompletionTrainConfig {
    fn default() -> Self {
        CompletionTrainConfig {
            steps: 1500,
            batch: 8,
            adam: AdamConfig::default(),
            grad_clip: 10.0,
            adv_batch: 2,
            augment: AugmentSpec::default(),
            holes: 3,
            hole_radius: (2.0, 5.0),
            seed: 0,
        }
    }
}

/// One line of the stage-one metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionMetrics {
    pub step: usize,
    #[serde(rename = "L_struct")]
    pub l_struct: f64,
    #[serde(rename = "L_kl")]
    pub l_kl: f64,
    #[serde(rename = "L_disc")]
    pub l_disc: f64,
    #[serde(rename = "L_gen")]
    pub l_gen: f64,
}

fn finite(values: &[(&str, f64)], step: usize) -> Result<()> {
    if values.iter().all(|(_, v)| v.is_finite()) {
        return Ok(());
    }
    let dump: Vec<String> = values.iter().map(|(k, v)| format!("{k}={v}")).collect();
    Err(Error::Numerical(format!(
        "non-finite loss at step {step}: {}",
        dump.join(", ")
    )))
}

fn apply<T: Scalar>(
    g: &mut Graph<T>,
    loss: Var,
    store: &mut ParameterStore<T>,
    cfg: &CompletionTrainConfig,
) -> Result<()> {
    g.backward(loss)?;
    g.accumulate_grads(store)?;
    store.clip_grad_norm(cfg.grad_clip);
    store.adam_step(&cfg.adam)
}

/// Hides random disks of road from the inpainter; their true intensity stays known.
fn holed_sample<T: Scalar>(state: &StateTensor<T>, cfg: &CompletionTrainConfig, rng: &mut Rng) -> AdvSample<T> {
    let n = state.size();
    let mut sample = AdvSample::from_state(state, &vec![true; n * n]);
    let roads: Vec<usize> = (0..n * n).filter(|&k| sample.structure[k]).collect();
    if roads.is_empty() {
        return sample;
    }
    for _ in 0..cfg.holes {
        let c = roads[rng.random_range(0..roads.len())];
        let (lo, hi) = cfg.hole_radius;
        let r = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let (ci, cj) = ((c / n) as f64, (c % n) as f64);
        for k in 0..n * n {
            let (i, j) = ((k / n) as f64, (k % n) as f64);
            if (i - ci).powi(2) + (j - cj).powi(2) <= r * r {
                sample.real[k] = false;
            }
        }
    }
    sample
}

/// Trains both stage-one models on `(x_past, x_full)` pairs. Every step draws
/// a batch uniformly with replacement, augments each pair, takes one SLVM
/// step, then one discriminator and one inpainter step on holed `x_full`.
pub fn train_completion<T: Scalar>(
    slvm: &mut SlvmModel<T>,
    adv: &mut AdvModel<T>,
    pairs: &[(StateTensor<T>, StateTensor<T>)],
    cfg: &CompletionTrainConfig,
    mut on_step: impl FnMut(&CompletionMetrics) -> Result<()>,
) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::state("no training pairs for the completion models"));
    }
    if cfg.batch == 0 || cfg.adv_batch == 0 {
        return Err(Error::config("batch and adv_batch must be at least 1"));
    }
    cfg.augment.validate()?;
    for step in 0..cfg.steps {
        let step_seed = derive_seed(cfg.seed, step as u64);
        let mut rng = rng_for(step_seed, stream::TRAIN);
        let mut batch = Vec::with_capacity(cfg.batch);
        for i in 0..cfg.batch {
            let (p, f) = &pairs[rng.random_range(0..pairs.len())];
            let spec = AugmentSpec {
                seed: derive_seed(step_seed, i as u64),
                ..cfg.augment.clone()
            };
            batch.push(augment_pair(p, f, &spec)?);
        }
        let past: Vec<&StateTensor<T>> = batch.iter().map(|(p, _)| p).collect();
        let full: Vec<&StateTensor<T>> = batch.iter().map(|(_, f)| f).collect();

        let noise = Tensor::from_vec(
            &[cfg.batch, slvm.config.z_dim],
            normal_vec(&mut rng, cfg.batch * slvm.config.z_dim),
        )?;
        let mut g = Graph::new();
        let loss = slvm_loss(slvm, &mut g, &past, &full, &noise)?;
        let (l_struct, l_kl) = (g.item(loss.l_struct).as_f64(), g.item(loss.l_kl).as_f64());
        finite(&[("L_struct", l_struct), ("L_kl", l_kl)], step)?;
        apply(&mut g, loss.total, &mut slvm.store, cfg)?;

        let samples: Vec<AdvSample<T>> = full[..cfg.adv_batch.min(cfg.batch)]
            .iter()
            .map(|f| holed_sample(f, cfg, &mut rng))
            .collect();
        let refs: Vec<&AdvSample<T>> = samples.iter().collect();

        let mut g = Graph::new();
        g.freeze("gen.");
        let inp = adv.inpaint(&mut g, &refs)?;
        let comp = adv.composite(&mut g, inp, &refs)?;
        let logits = adv.discriminate(&mut g, &refs, comp)?;
        let ld = disc_loss(&mut g, logits, &refs)?;
        let l_disc = g.item(ld).as_f64();
        finite(&[("L_disc", l_disc)], step)?;
        apply(&mut g, ld, &mut adv.disc, cfg)?;

        let mut g = Graph::new();
        g.freeze("disc.");
        let inp = adv.inpaint(&mut g, &refs)?;
        let comp = adv.composite(&mut g, inp, &refs)?;
        let logits = adv.discriminate(&mut g, &refs, comp)?;
        let lg = gen_loss(&mut g, logits, inp, &refs, adv.config.lambda_rec)?;
        let l_gen = g.item(lg).as_f64();
        finite(&[("L_gen", l_gen)], step)?;
        apply(&mut g, lg, &mut adv.gen, cfg)?;

        on_step(&CompletionMetrics {
            step,
            l_struct,
            l_kl,
            l_disc,
            l_gen,
        })?;
    }
    Ok(())
}
