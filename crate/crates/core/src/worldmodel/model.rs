use serde::{Deserialize, Serialize};

use crate::bevgrid::{stack_states, Role, StateTensor, CH_INTENSITY, CH_ROAD};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, normal_vec, rng_for, stream};
use crate::scalar::Scalar;
use crate::tensornet::nn::{conv_act, Conv, Dense, Pyramid, LEAK};
use crate::tensornet::{gaussian_kl, reparameterize, DiagonalGaussian, Graph, ParameterStore, Tensor, Var};

/// Number of latent levels.
pub const LEVELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HvaeConfig {
    pub size: usize,
    /// Encoder channels at 1/2, 1/4, 1/8 and 1/16 resolution.
    pub enc_widths: [usize; 4],
    pub global_dim: usize,
    /// Channels of `z1`, `z2`, `z3`.
    pub z_channels: [usize; LEVELS],
    /// Decoder channels at 4×4 through 16×16, then at 1/2 and full resolution.
    pub dec_widths: [usize; 3],
    /// Fixed standard deviation of the intensity likelihood.
    pub sigma_out: f64,
}

impl Default for HvaeConfig {
    fn default() -> Self {
        HvaeConfig {
            size: 64,
            enc_widths: [16, 32, 32, 32],
            global_dim: 64,
            z_channels: [4, 8, 16],
            dec_widths: [32, 16, 8],
            sigma_out: 0.3,
        }
    }
}

impl HvaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size != 64 {
            return Err(Error::config(format!(
                "the latent hierarchy (1x1, 4x4, 16x16) is laid out for 64x64 states, got {}",
                self.size
            )));
        }
        if self.enc_widths.contains(&0)
            || self.z_channels.contains(&0)
            || self.dec_widths.contains(&0)
            || self.global_dim == 0
        {
            return Err(Error::config("hvae widths must be nonzero"));
        }
        if !(self.sigma_out > 0.0) {
            return Err(Error::config("sigma_out must be positive"));
        }
        Ok(())
    }
}

/// Which bottom-up encoder a pass uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Path {
    /// `phi.`, sees the pseudo-complete state.
    Full,
    /// `psi.`, sees the past state.
    Partial,
}

impl Path {
    fn prefix(self) -> &'static str {
        match self {
            Path::Full => "phi",
            Path::Partial => "psi",
        }
    }
}

#[derive(Debug, Clone)]
struct EncoderLayers {
    pyramid: Pyramid,
    global: Dense,
    q3: Dense,
    q2: Conv,
    q1: Conv,
}

impl EncoderLayers {
    fn new(path: Path, c: &HvaeConfig) -> Self {
        let p = path.prefix();
        let w = c.enc_widths;
        let d = c.dec_widths[0];
        EncoderLayers {
            pyramid: Pyramid::new(&format!("{p}.enc"), 3, &w),
            global: Dense::new(format!("{p}.global"), w[3] * 16, c.global_dim),
            q3: Dense::new(format!("{p}.q3"), c.global_dim, 2 * c.z_channels[2]),
            q2: Conv::new(format!("{p}.q2"), d + w[3], 2 * c.z_channels[1], 3, 1),
            q1: Conv::new(format!("{p}.q1"), d + w[1], 2 * c.z_channels[0], 3, 1),
        }
    }

    fn init<T: Scalar>(&self, store: &mut ParameterStore<T>, rng: &mut crate::rng::Rng) -> Result<()> {
        self.pyramid.init(store, rng)?;
        self.global.init(store, 1.0, rng)?;
        self.q3.init(store, 0.1, rng)?;
        self.q2.init(store, 0.1, rng)?;
        self.q1.init(store, 0.1, rng)
    }
}

/// Bottom-up features of one encoder.
#[derive(Debug, Clone, Copy)]
struct Features {
    global: Var,
    f4: Var,
    f16: Var,
}

#[derive(Debug, Clone)]
pub struct HvaeModel<T> {
    pub config: HvaeConfig,
    pub store: ParameterStore<T>,
    phi: EncoderLayers,
    psi: EncoderLayers,
    in3: Dense,
    p2: Conv,
    m2: Conv,
    c8: Conv,
    c16: Conv,
    p1: Conv,
    m1: Conv,
    c32: Conv,
    c64: Conv,
    out: Conv,
}

/// Standard normal noise for one sample at every level, shallowest first:
/// `[z1 (c1·16·16), z2 (c2·4·4), z3 (c3)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelNoise<T>(pub [Vec<T>; LEVELS]);

impl<T: Scalar> LevelNoise<T> {
    pub fn sizes(c: &HvaeConfig) -> [usize; LEVELS] {
        [c.z_channels[0] * 256, c.z_channels[1] * 16, c.z_channels[2]]
    }

    pub fn draw(c: &HvaeConfig, rng: &mut crate::rng::Rng) -> Self {
        let s = Self::sizes(c);
        LevelNoise([normal_vec(rng, s[0]), normal_vec(rng, s[1]), normal_vec(rng, s[2])])
    }

    pub fn zeros(c: &HvaeConfig) -> Self {
        let s = Self::sizes(c);
        LevelNoise([vec![T::zero(); s[0]], vec![T::zero(); s[1]], vec![T::zero(); s[2]]])
    }

    /// Noise of the `i`-th prediction sample under `seed`.
    pub fn for_sample(c: &HvaeConfig, seed: u64, i: usize) -> Self {
        Self::draw(c, &mut rng_for(derive_seed(seed, i as u64), stream::PREDICT))
    }
}

/// Stacks per-sample noise of one level into a batch tensor of `shape`.
fn level_tensor<T: Scalar>(noise: &[&LevelNoise<T>], level: usize, shape: &[usize]) -> Result<Tensor<T>> {
    let data: Vec<T> = noise.iter().flat_map(|n| n.0[level].iter().copied()).collect();
    Tensor::from_vec(shape, data)
}

/// Gaussians and samples of one top-down pass.
struct TopDown {
    /// Posterior of the driving path, shallowest level first.
    post: [DiagonalGaussian; LEVELS],
    /// Learned priors of `z1` and `z2`; `z3` has the unit prior.
    prior: [DiagonalGaussian; 2],
    /// Decoder state feeding the heads of `z2` and `z1`.
    state: [Var; 2],
    logits: Var,
}

impl<T: Scalar> HvaeModel<T> {
    pub fn new(config: HvaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let [d4, d32, d64] = config.dec_widths;
        let [c1, c2, c3] = config.z_channels;
        let model = HvaeModel {
            phi: EncoderLayers::new(Path::Full, &config),
            psi: EncoderLayers::new(Path::Partial, &config),
            in3: Dense::new("theta.in3", c3, d4 * 16),
            p2: Conv::new("theta.p2", d4, 2 * c2, 3, 1),
            m2: Conv::new("theta.m2", d4 + c2, d4, 3, 1),
            c8: Conv::new("theta.c8", d4, d4, 3, 1),
            c16: Conv::new("theta.c16", d4, d4, 3, 1),
            p1: Conv::new("theta.p1", d4, 2 * c1, 3, 1),
            m1: Conv::new("theta.m1", d4 + c1, d4, 3, 1),
            c32: Conv::new("theta.c32", d4, d32, 3, 1),
            c64: Conv::new("theta.c64", d32, d64, 3, 1),
            out: Conv::new("theta.out", d64, 2, 3, 1),
            store: ParameterStore::new(),
            config,
        };
        let mut store = ParameterStore::new();
        let mut rng = rng_for(seed, stream::INIT);
        model.phi.init(&mut store, &mut rng)?;
        model.psi.init(&mut store, &mut rng)?;
        model.in3.init(&mut store, 1.0, &mut rng)?;
        model.p2.init(&mut store, 0.1, &mut rng)?;
        model.m2.init(&mut store, 0.5, &mut rng)?;
        model.c8.init(&mut store, 1.0, &mut rng)?;
        model.c16.init(&mut store, 1.0, &mut rng)?;
        model.p1.init(&mut store, 0.1, &mut rng)?;
        model.m1.init(&mut store, 0.5, &mut rng)?;
        model.c32.init(&mut store, 1.0, &mut rng)?;
        model.c64.init(&mut store, 1.0, &mut rng)?;
        model.out.init(&mut store, 0.5, &mut rng)?;
        Ok(HvaeModel { store, ..model })
    }

    fn layers(&self, path: Path) -> &EncoderLayers {
        match path {
            Path::Full => &self.phi,
            Path::Partial => &self.psi,
        }
    }

    fn encode(&self, g: &mut Graph<T>, path: Path, x: Var) -> Result<Features> {
        let l = self.layers(path);
        let feats = l.pyramid.forward(g, &self.store, x)?;
        let b = g.shape(x)[0];
        let flat = g.reshape(feats[3], &[b, l.global.din])?;
        let h = l.global.forward(g, &self.store, flat)?;
        Ok(Features {
            global: g.leaky_relu(h, LEAK),
            f4: feats[3],
            f16: feats[1],
        })
    }

    fn post3(&self, g: &mut Graph<T>, path: Path, f: &Features) -> Result<DiagonalGaussian> {
        let h = self.layers(path).q3.forward(g, &self.store, f.global)?;
        DiagonalGaussian::from_head(g, h, self.config.z_channels[2])
    }

    fn post_spatial(
        &self,
        g: &mut Graph<T>,
        path: Path,
        level: usize,
        state: Var,
        f: &Features,
    ) -> Result<DiagonalGaussian> {
        let l = self.layers(path);
        let (head, feat) = if level == 1 { (&l.q2, f.f4) } else { (&l.q1, f.f16) };
        let cat = g.concat_channels(&[state, feat])?;
        let h = head.forward(g, &self.store, cat)?;
        DiagonalGaussian::from_head(g, h, self.config.z_channels[level])
    }

    fn prior(&self, g: &mut Graph<T>, level: usize, state: Var) -> Result<DiagonalGaussian> {
        let head = if level == 1 { &self.p2 } else { &self.p1 };
        let h = head.forward(g, &self.store, state)?;
        DiagonalGaussian::from_head(g, h, self.config.z_channels[level])
    }

    /// Residual merge of a sampled latent into the decoder state.
    fn merge(&self, g: &mut Graph<T>, conv: &Conv, state: Var, z: Var) -> Result<Var> {
        let cat = g.concat_channels(&[state, z])?;
        let d = conv_act(conv, g, &self.store, cat)?;
        g.add(state, d)
    }

    /// Decoder from `z3` down to `z2`'s state (`[B, d, 4, 4]`).
    fn state4(&self, g: &mut Graph<T>, z3: Var) -> Result<Var> {
        let b = g.shape(z3)[0];
        let h = self.in3.forward(g, &self.store, z3)?;
        let h = g.leaky_relu(h, LEAK);
        g.reshape(h, &[b, self.config.dec_widths[0], 4, 4])
    }

    fn state16(&self, g: &mut Graph<T>, h4: Var) -> Result<Var> {
        let up = g.upsample2x(h4)?;
        let h8 = conv_act(&self.c8, g, &self.store, up)?;
        let up = g.upsample2x(h8)?;
        conv_act(&self.c16, g, &self.store, up)
    }

    fn head(&self, g: &mut Graph<T>, h16: Var) -> Result<Var> {
        let up = g.upsample2x(h16)?;
        let h32 = conv_act(&self.c32, g, &self.store, up)?;
        let up = g.upsample2x(h32)?;
        let h64 = conv_act(&self.c64, g, &self.store, up)?;
        self.out.forward(g, &self.store, h64)
    }

    /// Top-down pass sampling every level from `path`'s posterior.
    fn top_down(&self, g: &mut Graph<T>, path: Path, f: &Features, noise: &[&LevelNoise<T>]) -> Result<TopDown> {
        let b = noise.len();
        let [c1, c2, c3] = self.config.z_channels;
        let q3 = self.post3(g, path, f)?;
        let z3 = reparameterize(g, &q3, &level_tensor(noise, 2, &[b, c3])?)?;
        let s4 = self.state4(g, z3)?;
        let p2 = self.prior(g, 1, s4)?;
        let q2 = self.post_spatial(g, path, 1, s4, f)?;
        let z2 = reparameterize(g, &q2, &level_tensor(noise, 1, &[b, c2, 4, 4])?)?;
        let h4 = self.merge(g, &self.m2, s4, z2)?;
        let s16 = self.state16(g, h4)?;
        let p1 = self.prior(g, 0, s16)?;
        let q1 = self.post_spatial(g, path, 0, s16, f)?;
        let z1 = reparameterize(g, &q1, &level_tensor(noise, 0, &[b, c1, 16, 16])?)?;
        let h16 = self.merge(g, &self.m1, s16, z1)?;
        let logits = self.head(g, h16)?;
        Ok(TopDown {
            post: [q1, q2, q3],
            prior: [p1, p2],
            state: [s4, s16],
            logits,
        })
    }

    /// Decodes logits into states with the mask set to one everywhere.
    fn to_states(&self, g: &Graph<T>, logits: Var) -> Result<Vec<StateTensor<T>>> {
        let n = self.config.size;
        let cells = n * n;
        g.value(logits)
            .data()
            .chunks(2 * cells)
            .map(|c| {
                let mut data = Vec::with_capacity(3 * cells);
                data.extend(c[..cells].iter().map(|&v| crate::tensornet::sigmoid(v)));
                data.extend(c[cells..].iter().map(|&v| crate::tensornet::sigmoid(v)));
                data.extend(std::iter::repeat_n(T::one(), cells));
                StateTensor::from_tensor(Tensor::from_vec(&[3, n, n], data)?, Role::Predicted)
            })
            .collect()
    }

    fn check(&self, states: &[&StateTensor<T>]) -> Result<()> {
        if states.is_empty() {
            return Err(Error::domain("empty batch"));
        }
        let n = self.config.size;
        match states.iter().find(|s| s.size() != n) {
            Some(s) => Err(Error::domain(format!(
                "state is {0}x{0}, model expects {n}x{n}",
                s.size()
            ))),
            None => Ok(()),
        }
    }
}

fn require_complete<T: Scalar>(states: &[&StateTensor<T>]) -> Result<()> {
    for s in states {
        if s.observed_count() != s.cells() {
            return Err(Error::domain(format!(
                "stage-two targets must be complete; {} of {} cells unobserved",
                s.cells() - s.observed_count(),
                s.cells()
            )));
        }
    }
    Ok(())
}

/// Bernoulli NLL of road plus fixed-σ Gaussian NLL of intensity, summed over
/// cells and averaged over the batch.
fn reconstruction<T: Scalar>(g: &mut Graph<T>, logits: Var, targets: &[&StateTensor<T>], sigma: f64) -> Result<Var> {
    let b = targets.len();
    let n = targets[0].size();
    let road_t = crate::bevgrid::channel_batch(targets, CH_ROAD, |v| v)?;
    let int_t = crate::bevgrid::channel_batch(targets, CH_INTENSITY, |v| v)?;
    let road_logit = g.slice_channels(logits, 0, 1)?;
    let int_logit = g.slice_channels(logits, 1, 1)?;
    let rt = g.constant(road_t);
    let bern = g.bce_logits_sum(road_logit, rt, None)?;
    let mean = g.sigmoid(int_logit);
    let it = g.constant(int_t);
    let d = g.sub(mean, it)?;
    let sq = g.square(d);
    let ss = g.sum(sq);
    let quad = g.scale(ss, 1.0 / (2.0 * sigma * sigma));
    let norm = (b * n * n) as f64 * (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let gauss = g.add_scalar(quad, norm);
    let total = g.add(bern, gauss)?;
    Ok(g.scale(total, 1.0 / b as f64))
}

/// Per-batch-mean ELBO terms.
#[derive(Debug, Clone, Copy)]
pub struct Elbo {
    pub l_rec: Var,
    pub l_kl_hier: Var,
    /// KL of each level, shallowest first.
    pub level_kl: [Var; LEVELS],
}

/// All three objectives from one full-path pass.
#[derive(Debug, Clone, Copy)]
pub struct Losses {
    pub elbo: Elbo,
    pub l_match: Var,
}

fn elbo_from<T: Scalar>(
    g: &mut Graph<T>,
    model: &HvaeModel<T>,
    td: &TopDown,
    targets: &[&StateTensor<T>],
) -> Result<Elbo> {
    let b = targets.len() as f64;
    let l_rec = reconstruction(g, td.logits, targets, model.config.sigma_out)?;
    let unit = DiagonalGaussian::standard(g, g.shape(td.post[2].mu).to_vec().as_slice());
    let k3 = gaussian_kl(g, &td.post[2], &unit)?;
    let k2 = gaussian_kl(g, &td.post[1], &td.prior[1])?;
    let k1 = gaussian_kl(g, &td.post[0], &td.prior[0])?;
    let level_kl = [g.scale(k1, 1.0 / b), g.scale(k2, 1.0 / b), g.scale(k3, 1.0 / b)];
    let s = g.add(level_kl[0], level_kl[1])?;
    let l_kl_hier = g.add(s, level_kl[2])?;
    Ok(Elbo {
        l_rec,
        l_kl_hier,
        level_kl,
    })
}

/// `Σ_k KL(q_φ ‖ q_ψ)` with the full path held fixed: the full-path
/// Gaussians and the decoder states conditioning the partial heads are
/// detached, so only `psi.` parameters receive gradients.
fn matching_from<T: Scalar>(
    g: &mut Graph<T>,
    model: &HvaeModel<T>,
    td: &TopDown,
    x_past: &[&StateTensor<T>],
) -> Result<Var> {
    let xp = g.constant(stack_states(x_past)?);
    let f = model.encode(g, Path::Partial, xp)?;
    let s4 = g.detach(td.state[0]);
    let s16 = g.detach(td.state[1]);
    let psi = [
        model.post_spatial(g, Path::Partial, 0, s16, &f)?,
        model.post_spatial(g, Path::Partial, 1, s4, &f)?,
        model.post3(g, Path::Partial, &f)?,
    ];
    let mut total: Option<Var> = None;
    for (q, p) in td.post.iter().zip(&psi) {
        let target = q.detach(g);
        let kl = gaussian_kl(g, &target, p)?;
        total = Some(match total {
            Some(t) => g.add(t, kl)?,
            None => kl,
        });
    }
    Ok(g.scale(total.expect("three levels"), 1.0 / x_past.len() as f64))
}

fn full_pass<T: Scalar>(
    model: &HvaeModel<T>,
    g: &mut Graph<T>,
    x_star: &[&StateTensor<T>],
    noise: &[&LevelNoise<T>],
) -> Result<TopDown> {
    model.check(x_star)?;
    require_complete(x_star)?;
    if noise.len() != x_star.len() {
        return Err(Error::domain(format!(
            "{} noise draws for {} states",
            noise.len(),
            x_star.len()
        )));
    }
    let sizes = LevelNoise::<T>::sizes(&model.config);
    if noise.iter().any(|n| (0..LEVELS).any(|l| n.0[l].len() != sizes[l])) {
        return Err(Error::domain(format!("noise levels must have sizes {sizes:?}")));
    }
    let x = g.constant(stack_states(x_star)?);
    let f = model.encode(g, Path::Full, x)?;
    model.top_down(g, Path::Full, &f, noise)
}

/// Reconstruction and hierarchical KL of pseudo-complete states.
pub fn elbo_loss<T: Scalar>(
    model: &HvaeModel<T>,
    g: &mut Graph<T>,
    x_star: &[&StateTensor<T>],
    noise: &[&LevelNoise<T>],
) -> Result<Elbo> {
    let td = full_pass(model, g, x_star, noise)?;
    elbo_from(g, model, &td, x_star)
}

/// Posterior matching loss along the full-path top-down pass.
pub fn posterior_matching_loss<T: Scalar>(
    model: &HvaeModel<T>,
    g: &mut Graph<T>,
    x_star: &[&StateTensor<T>],
    x_past: &[&StateTensor<T>],
    noise: &[&LevelNoise<T>],
) -> Result<Var> {
    model.check(x_past)?;
    if x_past.len() != x_star.len() {
        return Err(Error::domain(format!(
            "{} past states for {} targets",
            x_past.len(),
            x_star.len()
        )));
    }
    let td = full_pass(model, g, x_star, noise)?;
    matching_from(g, model, &td, x_past)
}

/// ELBO terms and the matching loss sharing one full-path pass.
pub fn training_losses<T: Scalar>(
    model: &HvaeModel<T>,
    g: &mut Graph<T>,
    x_star: &[&StateTensor<T>],
    x_past: &[&StateTensor<T>],
    noise: &[&LevelNoise<T>],
) -> Result<Losses> {
    model.check(x_past)?;
    if x_past.len() != x_star.len() {
        return Err(Error::domain(format!(
            "{} past states for {} targets",
            x_past.len(),
            x_star.len()
        )));
    }
    let td = full_pass(model, g, x_star, noise)?;
    let elbo = elbo_from(g, model, &td, x_star)?;
    let l_match = matching_from(g, model, &td, x_past)?;
    Ok(Losses { elbo, l_match })
}

/// Complete states sampled through the partial path. Sample `i` uses noise
/// derived from `(seed, i)`, so the first `k` samples do not depend on
/// `n_samples`.
pub fn predict<T: Scalar>(
    model: &HvaeModel<T>,
    x_past: &StateTensor<T>,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<StateTensor<T>>> {
    if n_samples == 0 {
        return Err(Error::config("n_samples must be at least 1"));
    }
    model.check(&[x_past])?;
    let noise: Vec<LevelNoise<T>> = (0..n_samples)
        .map(|i| LevelNoise::for_sample(&model.config, seed, i))
        .collect();
    let refs: Vec<&LevelNoise<T>> = noise.iter().collect();
    let mut g = Graph::inference();
    let xp = g.constant(stack_states(&vec![x_past; n_samples])?);
    let f = model.encode(&mut g, Path::Partial, xp)?;
    let td = model.top_down(&mut g, Path::Partial, &f, &refs)?;
    model.to_states(&g, td.logits)
}

/// Overwrites road and intensity of every cell observed in `x_past` with the
/// observation, keeping the sample everywhere else.
pub fn keep_observed<T: Scalar>(sample: &mut StateTensor<T>, x_past: &StateTensor<T>) -> Result<()> {
    if sample.data.shape() != x_past.data.shape() {
        return Err(Error::domain(format!(
            "keep_observed: shape {:?} vs {:?}",
            sample.data.shape(),
            x_past.data.shape()
        )));
    }
    for k in (0..x_past.size() * x_past.size()).filter(|&k| x_past.observed(k)) {
        sample.channel_mut(CH_ROAD)[k] = x_past.road()[k];
        sample.channel_mut(CH_INTENSITY)[k] = x_past.intensity()[k];
    }
    Ok(())
}

/// Samples through the full path: `z ~ q_φ(z | x*)`, decoded.
pub fn reconstruct<T: Scalar>(
    model: &HvaeModel<T>,
    x_star: &StateTensor<T>,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<StateTensor<T>>> {
    if n_samples == 0 {
        return Err(Error::config("n_samples must be at least 1"));
    }
    let noise: Vec<LevelNoise<T>> = (0..n_samples)
        .map(|i| LevelNoise::for_sample(&model.config, seed, i))
        .collect();
    let refs: Vec<&LevelNoise<T>> = noise.iter().collect();
    let mut g = Graph::inference();
    let stars = vec![x_star; n_samples];
    let td = full_pass(model, &mut g, &stars, &refs)?;
    model.to_states(&g, td.logits)
}

/// Decodes `z ~ p_θ(z)` (unit top prior, learned lower priors).
pub fn sample_prior<T: Scalar>(model: &HvaeModel<T>, n_samples: usize, seed: u64) -> Result<Vec<StateTensor<T>>> {
    if n_samples == 0 {
        return Err(Error::config("n_samples must be at least 1"));
    }
    let noise: Vec<LevelNoise<T>> = (0..n_samples)
        .map(|i| LevelNoise::for_sample(&model.config, seed, i))
        .collect();
    let refs: Vec<&LevelNoise<T>> = noise.iter().collect();
    let [c1, c2, c3] = model.config.z_channels;
    let b = n_samples;
    let mut g = Graph::inference();
    let z3 = g.constant(level_tensor(&refs, 2, &[b, c3])?);
    let s4 = model.state4(&mut g, z3)?;
    let p2 = model.prior(&mut g, 1, s4)?;
    let z2 = reparameterize(&mut g, &p2, &level_tensor(&refs, 1, &[b, c2, 4, 4])?)?;
    let h4 = model.merge(&mut g, &model.m2, s4, z2)?;
    let s16 = model.state16(&mut g, h4)?;
    let p1 = model.prior(&mut g, 0, s16)?;
    let z1 = reparameterize(&mut g, &p1, &level_tensor(&refs, 0, &[b, c1, 16, 16])?)?;
    let h16 = model.merge(&mut g, &model.m1, s16, z1)?;
    let logits = model.head(&mut g, h16)?;
    model.to_states(&g, logits)
}
