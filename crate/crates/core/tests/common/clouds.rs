use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use wm_core::register::Transform2;
use wm_core::rng::{rng_for, Rng};

/// 200-ish point non-degenerate cloud: a Gaussian blob bent along a parabola,
/// so it has no rotational or translational symmetry.
pub fn bent_blob(n: usize, rng: &mut Rng) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| {
            let u: f64 = StandardNormal.sample(rng);
            let v: f64 = StandardNormal.sample(rng);
            let x = 5.0 * u;
            [x, 2.5 * v + 0.1 * x * x]
        })
        .collect()
}

/// Trial `k` of the recovery experiment: a cloud and a transform with
/// rotation up to `max_deg` and translation up to `max_t` meters.
pub fn recovery_trial(k: u64, max_deg: f64, max_t: f64) -> (Vec<[f64; 2]>, Transform2<f64>) {
    let mut rng = rng_for(k, 4242);
    let cloud = bent_blob(200, &mut rng);
    let rot = rng.random_range(-max_deg..=max_deg).to_radians();
    let dir = rng.random_range(0.0..std::f64::consts::TAU);
    let r = rng.random_range(0.0..=max_t);
    (cloud, Transform2::new(rot, r * dir.cos(), r * dir.sin()))
}

pub fn apply_all(t: &Transform2<f64>, pts: &[[f64; 2]]) -> Vec<[f64; 2]> {
    pts.iter().map(|&p| t.apply(p)).collect()
}

pub fn recovered(est: &Transform2<f64>, truth: &Transform2<f64>, deg: f64, meters: f64) -> bool {
    (est.rotation - truth.rotation).abs().to_degrees() < deg
        && (est.tx - truth.tx).abs() < meters
        && (est.ty - truth.ty).abs() < meters
}
