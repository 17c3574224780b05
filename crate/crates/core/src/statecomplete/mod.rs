//! Stage one: plausible complete states from past and future observations.
//!
//! A stochastic latent variable model predicts missing structure (road
//! regions) and an adversarial inpainter fills in intensity on the newly
//! predicted structure. Together they turn `x_full` into a pseudo-complete
//! state `x*_full` used as the target of the world model.

mod adv;
mod slvm;
pub mod train;

pub use adv::{adv_losses, disc_loss, gen_loss, AdvConfig, AdvLosses, AdvModel, AdvSample};
pub use slvm::{masked_struct_loss, slvm_complete, slvm_decode, slvm_loss, Encoder, SlvmConfig, SlvmLoss, SlvmModel};
pub use train::{train_completion, CompletionMetrics, CompletionTrainConfig};

use crate::bevgrid::{Role, StateTensor, CH_INTENSITY, CH_MASK, CH_ROAD};
use crate::error::Result;
use crate::rng::{normal_vec, rng_for, stream};
use crate::scalar::Scalar;
use crate::tensornet::Graph;

/// `x*_full`: structure from [`slvm_complete`], intensity on new structure
/// from the inpainter, every remaining unobserved cell decided as not-road.
/// Observed cells of `x_full` are kept bit for bit and the mask is all ones.
pub fn make_pseudo_full<T: Scalar>(
    slvm: &SlvmModel<T>,
    adv: &AdvModel<T>,
    x_full: &StateTensor<T>,
    seed: u64,
) -> Result<StateTensor<T>> {
    let cells = x_full.cells();
    if x_full.observed_count() == cells {
        return Ok(x_full.clone().with_role(Role::PseudoFull));
    }
    let noise = normal_vec::<T>(&mut rng_for(seed, stream::PSEUDO), slvm.config.z_dim);
    let completed = slvm_complete(slvm, x_full, &noise)?;
    let new: Vec<bool> = (0..cells)
        .map(|k| completed.observed(k) && !x_full.observed(k))
        .collect();
    let mut out = completed;
    if new.iter().any(|&b| b) {
        let shown: Vec<bool> = (0..cells).map(|k| x_full.observed(k)).collect();
        let sample = AdvSample::from_state(&out, &shown);
        let mut g = Graph::inference();
        let inp = adv.inpaint(&mut g, &[&sample])?;
        let values = g.value(inp).data();
        let intensity = out.channel_mut(CH_INTENSITY);
        for k in (0..cells).filter(|&k| new[k]) {
            intensity[k] = values[k];
        }
    }
    for k in 0..cells {
        if out.mask()[k] == T::zero() {
            out.channel_mut(CH_ROAD)[k] = T::zero();
            out.channel_mut(CH_INTENSITY)[k] = T::zero();
            out.channel_mut(CH_MASK)[k] = T::one();
        }
    }
    Ok(out)
}
