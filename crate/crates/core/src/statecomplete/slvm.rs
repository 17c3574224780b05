//! Stochastic latent variable structure predictor.
//!
//! Two bottom-up encoders map `x_full` and `x_past` to single-level Gaussians
//! `Z_full` and `Z_past`. The decoder is a U-Net over the past encoder's
//! features (`h_past`) with `z` tiled onto the coarsest level.

use serde::{Deserialize, Serialize};

use crate::bevgrid::{stack_states, Role, StateTensor, CH_INTENSITY, CH_MASK, CH_ROAD};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};
use crate::scalar::Scalar;
use crate::tensornet::nn::{conv_act, Conv, Dense, Pyramid};
use crate::tensornet::{gaussian_kl, reparameterize, DiagonalGaussian, Graph, ParameterStore, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlvmConfig {
    /// Grid cells per side.
    pub size: usize,
    pub z_dim: usize,
    /// Channels of each stride-2 encoder level, finest first.
    pub widths: Vec<usize>,
    pub lambda_kl: f64,
}

impl Default for SlvmConfig {
    fn default() -> Self {
        SlvmConfig {
            size: 64,
            z_dim: 32,
            widths: vec![16, 32, 32, 32],
            lambda_kl: 1e-2,
        }
    }
}

impl SlvmConfig {
    pub fn validate(&self) -> Result<()> {
        let levels = self.widths.len();
        if levels == 0 || self.z_dim == 0 || self.widths.contains(&0) {
            return Err(Error::config("slvm needs at least one level and nonzero widths"));
        }
        if self.size == 0 || !self.size.is_multiple_of(1 << levels) {
            return Err(Error::config(format!(
                "grid size {} is not divisible by 2^{levels}",
                self.size
            )));
        }
        if !(self.lambda_kl >= 0.0) {
            return Err(Error::config("lambda_kl must be nonnegative"));
        }
        Ok(())
    }

    fn bottom(&self) -> usize {
        self.size >> self.widths.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoder {
    Full,
    Past,
}

#[derive(Debug, Clone)]
pub struct SlvmModel<T> {
    pub config: SlvmConfig,
    pub store: ParameterStore<T>,
    enc_full: Pyramid,
    enc_past: Pyramid,
    head_full: Dense,
    head_past: Dense,
    /// Decoder convolutions, coarsest level first.
    dec: Vec<Conv>,
    dec_top: Conv,
    out: Conv,
}

impl<T: Scalar> SlvmModel<T> {
    pub fn new(config: SlvmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let w = &config.widths;
        let levels = w.len();
        let flat = w[levels - 1] * config.bottom() * config.bottom();
        let z = config.z_dim;
        let mut dec = vec![Conv::new("dec.0", w[levels - 1] + z, w[levels - 1], 3, 1)];
        for (i, l) in (0..levels - 1).rev().enumerate() {
            dec.push(Conv::new(format!("dec.{}", i + 1), w[l + 1] + w[l], w[l], 3, 1));
        }
        let top = (w[0] / 2).max(4);
        let model = SlvmModel {
            enc_full: Pyramid::new("full.enc", 3, w),
            enc_past: Pyramid::new("past.enc", 3, w),
            head_full: Dense::new("full.head", flat, 2 * z),
            head_past: Dense::new("past.head", flat, 2 * z),
            dec,
            dec_top: Conv::new("dec.top", w[0] + 3, top, 3, 1),
            out: Conv::new("dec.out", top, 2, 3, 1),
            store: ParameterStore::new(),
            config,
        };
        let mut store = ParameterStore::new();
        let mut rng = rng_for(seed, stream::INIT);
        model.enc_full.init(&mut store, &mut rng)?;
        model.enc_past.init(&mut store, &mut rng)?;
        model.head_full.init(&mut store, 0.1, &mut rng)?;
        model.head_past.init(&mut store, 0.1, &mut rng)?;
        for c in &model.dec {
            c.init(&mut store, 1.0, &mut rng)?;
        }
        model.dec_top.init(&mut store, 1.0, &mut rng)?;
        model.out.init(&mut store, 0.5, &mut rng)?;
        Ok(SlvmModel { store, ..model })
    }

    /// Encoder features (finest first) and the latent Gaussian.
    pub fn encode(&self, g: &mut Graph<T>, which: Encoder, x: Var) -> Result<(Vec<Var>, DiagonalGaussian)> {
        let (pyr, head) = match which {
            Encoder::Full => (&self.enc_full, &self.head_full),
            Encoder::Past => (&self.enc_past, &self.head_past),
        };
        let feats = pyr.forward(g, &self.store, x)?;
        let top = *feats.last().expect("at least one level");
        let b = g.shape(top)[0];
        let flat = g.reshape(top, &[b, head.din])?;
        let h = head.forward(g, &self.store, flat)?;
        let q = DiagonalGaussian::from_head(g, h, self.config.z_dim)?;
        Ok((feats, q))
    }

    /// Decoded `[B, 2, n, n]` road and intensity in `(0, 1)`.
    pub fn decode(&self, g: &mut Graph<T>, h_past: &[Var], x_past: Var, z: Var) -> Result<Var> {
        let levels = self.config.widths.len();
        let bottom = self.config.bottom();
        let zt = g.tile_spatial(z, bottom, bottom)?;
        let cat = g.concat_channels(&[h_past[levels - 1], zt])?;
        let mut h = conv_act(&self.dec[0], g, &self.store, cat)?;
        for (i, l) in (0..levels - 1).rev().enumerate() {
            let up = g.upsample2x(h)?;
            let cat = g.concat_channels(&[up, h_past[l]])?;
            h = conv_act(&self.dec[i + 1], g, &self.store, cat)?;
        }
        let up = g.upsample2x(h)?;
        let cat = g.concat_channels(&[up, x_past])?;
        let h = conv_act(&self.dec_top, g, &self.store, cat)?;
        let logits = self.out.forward(g, &self.store, h)?;
        Ok(g.sigmoid(logits))
    }
}

fn check_batch<T: Scalar>(size: usize, states: &[&StateTensor<T>]) -> Result<()> {
    if states.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    match states.iter().find(|s| s.size() != size) {
        Some(s) => Err(Error::domain(format!(
            "state is {0}x{0}, model expects {size}x{size}",
            s.size()
        ))),
        None => Ok(()),
    }
}

/// `(1/N_struct) Σ M ⊙ (x̂ − x)²` over road and intensity, per sample, averaged
/// over the samples that have at least one observed cell.
///
/// Returns the loss and the number of samples skipped for having none.
pub fn masked_struct_loss<T: Scalar>(
    g: &mut Graph<T>,
    x_hat: Var,
    targets: &[&StateTensor<T>],
) -> Result<(Var, usize)> {
    let b = targets.len();
    let n = targets.first().map_or(0, |s| s.size());
    if g.shape(x_hat) != [b, 2, n, n] {
        return Err(Error::domain(format!(
            "prediction {:?} does not match {b} targets of {n}x{n}",
            g.shape(x_hat)
        )));
    }
    let cells = n * n;
    let mut target = Vec::with_capacity(2 * b * cells);
    let mut weight = Vec::with_capacity(2 * b * cells);
    let mut skipped = 0;
    for s in targets {
        let count = s.observed_count();
        if count == 0 {
            skipped += 1;
        }
        let w = if count == 0 { 0.0 } else { 1.0 / count as f64 };
        for c in [CH_ROAD, CH_INTENSITY] {
            target.extend_from_slice(s.channel(c));
            weight.extend(
                s.mask()
                    .iter()
                    .map(|&m| if m > T::lit(0.5) { T::lit(w) } else { T::zero() }),
            );
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} of {b} samples have no observed cells; L_struct ignores them");
    }
    let t = g.constant(Tensor::from_vec(&[b, 2, n, n], target)?);
    let w = g.constant(Tensor::from_vec(&[b, 2, n, n], weight)?);
    let d = g.sub(x_hat, t)?;
    let sq = g.square(d);
    let wsq = g.mul(sq, w)?;
    let total = g.sum(wsq);
    let valid = (b - skipped).max(1);
    Ok((g.scale(total, 1.0 / valid as f64), skipped))
}

#[derive(Debug, Clone, Copy)]
pub struct SlvmLoss {
    pub l_struct: Var,
    pub l_kl: Var,
    pub total: Var,
    pub skipped: usize,
}

/// Training objective: reconstruct `x_full` from `h_past` and `z_full ~ Z_full`,
/// plus `λ_kl · KL(Z_full ‖ Z_past)` averaged over the batch.
///
/// `noise` is `[B, z_dim]` standard normal.
pub fn slvm_loss<T: Scalar>(
    model: &SlvmModel<T>,
    g: &mut Graph<T>,
    x_past: &[&StateTensor<T>],
    x_full: &[&StateTensor<T>],
    noise: &Tensor<T>,
) -> Result<SlvmLoss> {
    let size = model.config.size;
    check_batch(size, x_past)?;
    check_batch(size, x_full)?;
    let b = x_past.len();
    if x_full.len() != b {
        return Err(Error::domain(format!(
            "{b} past states but {} full states",
            x_full.len()
        )));
    }
    if noise.shape() != [b, model.config.z_dim] {
        return Err(Error::domain(format!(
            "noise {:?}, expected [{b}, {}]",
            noise.shape(),
            model.config.z_dim
        )));
    }
    let xp = g.constant(stack_states(x_past)?);
    let xf = g.constant(stack_states(x_full)?);
    let (h_past, z_past) = model.encode(g, Encoder::Past, xp)?;
    let (_, z_full) = model.encode(g, Encoder::Full, xf)?;
    let z = reparameterize(g, &z_full, noise)?;
    let x_hat = model.decode(g, &h_past, xp, z)?;
    let (l_struct, skipped) = masked_struct_loss(g, x_hat, x_full)?;
    let kl = gaussian_kl(g, &z_full, &z_past)?;
    let l_kl = g.scale(kl, 1.0 / b as f64);
    let weighted = g.scale(l_kl, model.config.lambda_kl);
    let total = g.add(l_struct, weighted)?;
    Ok(SlvmLoss {
        l_struct,
        l_kl,
        total,
        skipped,
    })
}

/// Road probabilities and intensities decoded from `z ~ Z_past(input)`.
pub fn slvm_decode<T: Scalar>(model: &SlvmModel<T>, input: &StateTensor<T>, noise: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    check_batch(model.config.size, &[input])?;
    if noise.len() != model.config.z_dim {
        return Err(Error::domain(format!(
            "noise has {} values, z_dim is {}",
            noise.len(),
            model.config.z_dim
        )));
    }
    let mut g = Graph::inference();
    let x = g.constant(stack_states(&[input])?);
    let (h, q) = model.encode(&mut g, Encoder::Past, x)?;
    let eps = Tensor::from_vec(&[1, noise.len()], noise.to_vec())?;
    let z = reparameterize(&mut g, &q, &eps)?;
    let out = model.decode(&mut g, &h, x, z)?;
    let cells = input.cells();
    let v = g.value(out).data();
    Ok((v[..cells].to_vec(), v[cells..2 * cells].to_vec()))
}

/// Structural completion with the learned prior: observed cells are copied
/// through; an unobserved cell whose predicted road probability is at least
/// 0.5 becomes an observed road cell (intensity 0, to be inpainted). Other
/// unobserved cells stay unobserved.
pub fn slvm_complete<T: Scalar>(model: &SlvmModel<T>, input: &StateTensor<T>, noise: &[T]) -> Result<StateTensor<T>> {
    let mut out = input.clone().with_role(Role::PseudoFull);
    if input.observed_count() == input.cells() {
        return Ok(out);
    }
    let (road, _) = slvm_decode(model, input, noise)?;
    for (k, &p) in road.iter().enumerate() {
        if !input.observed(k) && p >= T::lit(0.5) {
            out.channel_mut(CH_ROAD)[k] = T::one();
            out.channel_mut(CH_INTENSITY)[k] = T::zero();
            out.channel_mut(CH_MASK)[k] = T::one();
        }
    }
    Ok(out)
}
