//! Adversarial texture inpainter with an element-wise discriminator.

use serde::{Deserialize, Serialize};

use crate::bevgrid::StateTensor;
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};
use crate::scalar::Scalar;
use crate::tensornet::nn::{conv_act, Conv};
use crate::tensornet::{Graph, ParameterStore, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdvConfig {
    pub size: usize,
    /// Inpainter channels at 1/2 and 1/4 resolution.
    pub gen_widths: [usize; 2],
    pub disc_width: usize,
    pub lambda_rec: f64,
}

impl Default for AdvConfig {
    fn default() -> Self {
        AdvConfig {
            size: 64,
            gen_widths: [8, 16],
            disc_width: 8,
            lambda_rec: 0.1,
        }
    }
}

impl AdvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || !self.size.is_multiple_of(4) {
            return Err(Error::config(format!(
                "adv grid size {} is not a multiple of 4",
                self.size
            )));
        }
        if self.gen_widths.contains(&0) || self.disc_width == 0 {
            return Err(Error::config("adv widths must be nonzero"));
        }
        if !(self.lambda_rec >= 0.0) {
            return Err(Error::config("lambda_rec must be nonnegative"));
        }
        Ok(())
    }
}

/// Inpainter parameters live under `gen.`, discriminator parameters under
/// `disc.`, in separate stores so each has its own optimizer state.
#[derive(Debug, Clone)]
pub struct AdvModel<T> {
    pub config: AdvConfig,
    pub gen: ParameterStore<T>,
    pub disc: ParameterStore<T>,
    g_layers: [Conv; 6],
    d_layers: [Conv; 4],
}

/// One inpainting problem over an `n×n` grid.
///
/// `structure` marks road cells; `real` ⊆ `structure` marks cells whose
/// intensity is shown to the inpainter; `known` marks cells whose true
/// intensity is available for the reconstruction term. Cells in `structure`
/// but not `real` are generated.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvSample<T> {
    pub size: usize,
    pub road: Vec<T>,
    pub intensity: Vec<T>,
    pub structure: Vec<bool>,
    pub real: Vec<bool>,
    pub known: Vec<bool>,
}

impl<T: Scalar> AdvSample<T> {
    /// Structure = road ≥ 0.5 among observed cells; real = known = `shown`
    /// restricted to structure.
    pub fn from_state(state: &StateTensor<T>, shown: &[bool]) -> Self {
        let n = state.size();
        let structure: Vec<bool> = (0..n * n)
            .map(|k| state.observed(k) && state.road()[k] >= T::lit(0.5))
            .collect();
        let real: Vec<bool> = structure.iter().zip(shown).map(|(&s, &r)| s && r).collect();
        AdvSample {
            size: n,
            road: state.road().to_vec(),
            intensity: state.intensity().to_vec(),
            known: real.clone(),
            real,
            structure,
        }
    }

    pub fn generated(&self, k: usize) -> bool {
        self.structure[k] && !self.real[k]
    }

    fn check(&self) -> Result<()> {
        let c = self.size * self.size;
        if [
            self.road.len(),
            self.intensity.len(),
            self.structure.len(),
            self.real.len(),
            self.known.len(),
        ]
        .iter()
        .any(|&l| l != c)
        {
            return Err(Error::domain("adv sample planes do not match its size"));
        }
        if (0..c).any(|k| self.real[k] && !self.structure[k]) {
            return Err(Error::domain("real cells must be structure cells"));
        }
        Ok(())
    }
}

fn plane<T: Scalar>(samples: &[&AdvSample<T>], f: impl Fn(&AdvSample<T>, usize) -> T) -> Result<Tensor<T>> {
    let n = samples[0].size;
    let data = samples
        .iter()
        .flat_map(|s| (0..n * n).map(|k| f(s, k)).collect::<Vec<_>>())
        .collect();
    Tensor::from_vec(&[samples.len(), 1, n, n], data)
}

fn flag<T: Scalar>(b: bool) -> T {
    if b {
        T::one()
    } else {
        T::zero()
    }
}

/// Per-sample weights `sel / |sel|` divided by the number of samples with a
/// nonempty selection, so a weighted sum is a mean of per-sample means.
fn mean_weights<T: Scalar>(
    samples: &[&AdvSample<T>],
    sel: impl Fn(&AdvSample<T>, usize) -> bool,
) -> Result<(Tensor<T>, usize)> {
    let n = samples[0].size;
    let counts: Vec<usize> = samples
        .iter()
        .map(|s| (0..n * n).filter(|&k| sel(s, k)).count())
        .collect();
    let valid = counts.iter().filter(|&&c| c > 0).count();
    let mut data = vec![T::zero(); samples.len() * n * n];
    for (i, s) in samples.iter().enumerate() {
        if counts[i] == 0 {
            continue;
        }
        let w = T::lit(1.0 / (counts[i] * valid) as f64);
        for k in 0..n * n {
            if sel(s, k) {
                data[i * n * n + k] = w;
            }
        }
    }
    Ok((Tensor::from_vec(&[samples.len(), 1, n, n], data)?, valid))
}

/// Mean over structure cells of `BCE(m, sigmoid(logits))`, averaged over
/// samples that have structure.
pub fn disc_loss<T: Scalar>(g: &mut Graph<T>, logits: Var, samples: &[&AdvSample<T>]) -> Result<Var> {
    let m = g.constant(plane(samples, |s, k| flag(s.real[k]))?);
    let (w, _) = mean_weights(samples, |s, k| s.structure[k])?;
    let w = g.constant(w);
    g.bce_logits_sum(logits, m, Some(w))
}

/// Non-saturating generator term `BCE(1, m̂)` over generated cells plus
/// `λ_rec` times the mean absolute intensity error over known cells.
pub fn gen_loss<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    inpainted: Var,
    samples: &[&AdvSample<T>],
    lambda_rec: f64,
) -> Result<Var> {
    let ones = g.constant(plane(samples, |_, _| T::one())?);
    let (wg, _) = mean_weights(samples, |s, k| s.generated(k))?;
    let wg = g.constant(wg);
    let adv = g.bce_logits_sum(logits, ones, Some(wg))?;
    let target = g.constant(plane(samples, |s, k| s.intensity[k])?);
    let (wk, _) = mean_weights(samples, |s, k| s.known[k])?;
    let wk = g.constant(wk);
    let d = g.sub(inpainted, target)?;
    let a = g.abs(d);
    let wa = g.mul(a, wk)?;
    let rec = g.sum(wa);
    let rec = g.scale(rec, lambda_rec);
    g.add(adv, rec)
}

#[derive(Debug, Clone, Copy)]
pub struct AdvLosses {
    pub l_disc: Var,
    pub l_gen: Var,
    /// Samples without structure cells (they contribute nothing).
    pub skipped: usize,
}

impl<T: Scalar> AdvModel<T> {
    pub fn new(config: AdvConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let [w0, w1] = config.gen_widths;
        let d = config.disc_width;
        let g_layers = [
            Conv::new("gen.e0", 3, w0, 3, 2),
            Conv::new("gen.e1", w0, w1, 3, 2),
            Conv::new("gen.mid", w1, w1, 3, 1),
            Conv::new("gen.u1", w1 + w0, w0, 3, 1),
            Conv::new("gen.u0", w0 + 3, w0, 3, 1),
            Conv::new("gen.out", w0, 1, 3, 1),
        ];
        let d_layers = [
            Conv::new("disc.d0", 2, d, 3, 1),
            Conv::new("disc.d1", d, 2 * d, 3, 2),
            Conv::new("disc.d2", 2 * d, 2 * d, 3, 1),
            Conv::new("disc.out", 3 * d, 1, 1, 1),
        ];
        let mut rng = rng_for(seed, stream::INIT);
        let (mut gen, mut disc) = (ParameterStore::new(), ParameterStore::new());
        for (i, c) in g_layers.iter().enumerate() {
            c.init(&mut gen, if i == 5 { 0.5 } else { 1.0 }, &mut rng)?;
        }
        for c in &d_layers {
            c.init(&mut disc, 1.0, &mut rng)?;
        }
        Ok(AdvModel {
            config,
            gen,
            disc,
            g_layers,
            d_layers,
        })
    }

    fn check(&self, samples: &[&AdvSample<T>]) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::domain("empty adv batch"));
        }
        for s in samples {
            s.check()?;
            if s.size != self.config.size {
                return Err(Error::domain(format!(
                    "adv sample is {0}x{0}, model expects {1}x{1}",
                    s.size, self.config.size
                )));
            }
        }
        Ok(())
    }

    /// Inpainted intensity `[B, 1, n, n]` in `(0, 1)`.
    pub fn inpaint(&self, g: &mut Graph<T>, samples: &[&AdvSample<T>]) -> Result<Var> {
        self.check(samples)?;
        let road = g.constant(plane(samples, |s, k| s.road[k])?);
        let shown = g.constant(plane(
            samples,
            |s, k| if s.real[k] { s.intensity[k] } else { T::zero() },
        )?);
        let hole = g.constant(plane(samples, |s, k| flag(s.generated(k)))?);
        let x = g.concat_channels(&[road, shown, hole])?;
        let [e0, e1, mid, u1, u0, out] = &self.g_layers;
        let s = &self.gen;
        let h0 = conv_act(e0, g, s, x)?;
        let h1 = conv_act(e1, g, s, h0)?;
        let h1 = conv_act(mid, g, s, h1)?;
        let up = g.upsample2x(h1)?;
        let cat = g.concat_channels(&[up, h0])?;
        let h = conv_act(u1, g, s, cat)?;
        let up = g.upsample2x(h)?;
        let cat = g.concat_channels(&[up, x])?;
        let h = conv_act(u0, g, s, cat)?;
        let logits = out.forward(g, s, h)?;
        Ok(g.sigmoid(logits))
    }

    /// Real intensity on real cells, inpainted intensity on generated cells, 0 elsewhere.
    pub fn composite(&self, g: &mut Graph<T>, inpainted: Var, samples: &[&AdvSample<T>]) -> Result<Var> {
        let real = g.constant(plane(
            samples,
            |s, k| if s.real[k] { s.intensity[k] } else { T::zero() },
        )?);
        let gen_mask = g.constant(plane(samples, |s, k| flag(s.generated(k)))?);
        let fake = g.mul(inpainted, gen_mask)?;
        g.add(real, fake)
    }

    /// Per-cell logits of "real" given road and composite intensity.
    pub fn discriminate(&self, g: &mut Graph<T>, samples: &[&AdvSample<T>], intensity: Var) -> Result<Var> {
        let road = g.constant(plane(samples, |s, k| s.road[k])?);
        let x = g.concat_channels(&[road, intensity])?;
        let [d0, d1, d2, out] = &self.d_layers;
        let s = &self.disc;
        let h0 = conv_act(d0, g, s, x)?;
        let h1 = conv_act(d1, g, s, h0)?;
        let h1 = conv_act(d2, g, s, h1)?;
        let up = g.upsample2x(h1)?;
        let cat = g.concat_channels(&[up, h0])?;
        out.forward(g, s, cat)
    }

    /// Discriminator probabilities `m̂` for each sample, `n×n` values in `(0, 1)`.
    pub fn disc_probs(&self, samples: &[&AdvSample<T>]) -> Result<Vec<Vec<T>>> {
        let mut g = Graph::inference();
        let inp = self.inpaint(&mut g, samples)?;
        let comp = self.composite(&mut g, inp, samples)?;
        let logits = self.discriminate(&mut g, samples, comp)?;
        let p = g.sigmoid(logits);
        let n = samples[0].size;
        Ok(g.value(p).data().chunks(n * n).map(<[T]>::to_vec).collect())
    }
}

/// Both adversarial objectives in one graph. The discriminator term sees the
/// composite through a stop-gradient, so it never moves the inpainter.
pub fn adv_losses<T: Scalar>(model: &AdvModel<T>, g: &mut Graph<T>, samples: &[&AdvSample<T>]) -> Result<AdvLosses> {
    let inp = model.inpaint(g, samples)?;
    let comp = model.composite(g, inp, samples)?;
    let fixed = g.detach(comp);
    let d_logits = model.discriminate(g, samples, fixed)?;
    let l_disc = disc_loss(g, d_logits, samples)?;
    let g_logits = model.discriminate(g, samples, comp)?;
    let l_gen = gen_loss(g, g_logits, inp, samples, model.config.lambda_rec)?;
    let skipped = samples.iter().filter(|s| !s.structure.iter().any(|&b| b)).count();
    Ok(AdvLosses { l_disc, l_gen, skipped })
}
