//! Stage two: hierarchical VAE with posterior matching.
//!
//! Three latent levels, deepest first: `z3` (global, 1×1), `z2` (4×4) and
//! `z1` (16×16) over 64×64 states. The full-path encoder (`phi.`) sees the
//! pseudo-complete state, the partial-path encoder (`psi.`) sees `x_past`,
//! and the shared top-down generative path (`theta.`) holds the priors and
//! the decoder. At inference only `psi.` and `theta.` are used.

mod model;
pub mod train;

pub use model::{
    elbo_loss, keep_observed, posterior_matching_loss, predict, reconstruct, sample_prior, training_losses, Elbo,
    HvaeConfig, HvaeModel, LevelNoise, Losses, Path, LEVELS,
};
pub use train::{train_step, StepMetrics, WmTrainConfig};
