//! One optimizer step of the stage-two objective.

use serde::{Deserialize, Serialize};

use super::model::{training_losses, HvaeModel, LevelNoise};
use crate::bevgrid::StateTensor;
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};
use crate::scalar::Scalar;
use crate::tensornet::{AdamConfig, Graph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WmTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub grad_clip: f64,
    /// Fraction of `steps` over which β rises linearly from 0 to 1.
    pub warmup_frac: f64,
    pub lambda_match: f64,
}

impl Default for WmTrainConfig {
    fn default() -> Self {
        WmTrainConfig {
            steps: 2000,
            batch: 8,
            adam: AdamConfig::default(),
            grad_clip: 1000.0,
            warmup_frac: 0.2,
            lambda_match: 1.0,
        }
    }
}

impl WmTrainConfig {
    /// KL weight at `step`.
    pub fn beta(&self, step: usize) -> f64 {
        let ramp = self.warmup_frac * self.steps as f64;
        if ramp <= 0.0 {
            1.0
        } else {
            (step as f64 / ramp).min(1.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    #[serde(rename = "L_rec")]
    pub l_rec: f64,
    #[serde(rename = "L_kl_hier")]
    pub l_kl_hier: f64,
    #[serde(rename = "L_match")]
    pub l_match: f64,
    pub beta: f64,
    pub grad_norm: f64,
}

/// `L_rec + β·L_kl_hier + λ_m·L_match`, one backward pass, one Adam update.
///
/// Noise comes from `(seed, TRAIN)`. A non-finite loss aborts before any
/// parameter changes, reporting every term.
pub fn train_step<T: Scalar>(
    model: &mut HvaeModel<T>,
    batch: &[(&StateTensor<T>, &StateTensor<T>)],
    cfg: &WmTrainConfig,
    step: usize,
    seed: u64,
) -> Result<StepMetrics> {
    if batch.is_empty() {
        return Err(Error::domain("empty training batch"));
    }
    let mut rng = rng_for(seed, stream::TRAIN);
    let noise: Vec<LevelNoise<T>> = batch
        .iter()
        .map(|_| LevelNoise::draw(&model.config, &mut rng))
        .collect();
    let noise_refs: Vec<&LevelNoise<T>> = noise.iter().collect();
    let past: Vec<&StateTensor<T>> = batch.iter().map(|(p, _)| *p).collect();
    let star: Vec<&StateTensor<T>> = batch.iter().map(|(_, s)| *s).collect();
    let beta = cfg.beta(step);
    let mut g = Graph::new();
    let l = training_losses(model, &mut g, &star, &past, &noise_refs)?;
    let kl = g.scale(l.elbo.l_kl_hier, beta);
    let m = g.scale(l.l_match, cfg.lambda_match);
    let s = g.add(l.elbo.l_rec, kl)?;
    let total = g.add(s, m)?;
    let metrics = StepMetrics {
        step,
        loss: g.item(total).as_f64(),
        l_rec: g.item(l.elbo.l_rec).as_f64(),
        l_kl_hier: g.item(l.elbo.l_kl_hier).as_f64(),
        l_match: g.item(l.l_match).as_f64(),
        beta,
        grad_norm: 0.0,
    };
    if !metrics.loss.is_finite() {
        let lv: Vec<String> = l.elbo.level_kl.iter().map(|&v| g.item(v).to_string()).collect();
        return Err(Error::Numerical(format!(
            "non-finite loss at step {step}: L_rec={} L_kl_hier={} (levels {}) L_match={} beta={beta}",
            metrics.l_rec,
            metrics.l_kl_hier,
            lv.join("/"),
            metrics.l_match
        )));
    }
    g.backward(total)?;
    g.accumulate_grads(&mut model.store)?;
    let grad_norm = model.store.clip_grad_norm(cfg.grad_clip);
    model.store.adam_step(&cfg.adam)?;
    Ok(StepMetrics { grad_norm, ..metrics })
}
