use rand::Rng as _;
use wm_core::bevgrid::{Role, StateTensor};
use wm_core::rng::rng_for;
use wm_core::tensornet::Tensor;

/// Random valid state: each cell observed with probability `observed`, with
/// binary road and uniform intensity there; 0.5 / 0 elsewhere.
pub fn random_state(n: usize, observed: f64, seed: u64, role: Role) -> StateTensor<f64> {
    let mut rng = rng_for(seed, 31);
    let cells = n * n;
    let mut data = vec![0.0; 3 * cells];
    for k in 0..cells {
        if rng.random::<f64>() < observed {
            data[k] = if rng.random::<bool>() { 1.0 } else { 0.0 };
            data[cells + k] = rng.random::<f64>();
            data[2 * cells + k] = 1.0;
        } else {
            data[k] = 0.5;
        }
    }
    StateTensor::from_tensor(Tensor::from_vec(&[3, n, n], data).unwrap(), role).unwrap()
}

/// Keeps the cells of `full` where `keep` holds and marks the rest unobserved.
pub fn restrict(full: &StateTensor<f64>, keep: impl Fn(usize) -> bool, role: Role) -> StateTensor<f64> {
    let cells = full.cells();
    let mut out = full.clone().with_role(role);
    for k in (0..cells).filter(|&k| !keep(k)) {
        out.channel_mut(0)[k] = 0.5;
        out.channel_mut(1)[k] = 0.0;
        out.channel_mut(2)[k] = 0.0;
    }
    out
}
