//! Smooth random scalar fields on square grids.

use rand::Rng as _;

use crate::rng::Rng;

/// Bilinear interpolation of a `(g+1)×(g+1)` lattice of uniform values over an
/// `n×n` grid. Values lie in `[0, 1)`; `g` controls the spatial frequency.
pub fn smooth_field(rng: &mut Rng, n: usize, g: usize) -> Vec<f64> {
    let g = g.max(1);
    let lattice: Vec<f64> = (0..(g + 1) * (g + 1)).map(|_| rng.random::<f64>()).collect();
    let mut out = vec![0.0; n * n];
    let scale = g as f64 / n as f64;
    for i in 0..n {
        let fy = (i as f64 + 0.5) * scale;
        let y0 = (fy.floor() as usize).min(g - 1);
        let ty = fy - y0 as f64;
        for j in 0..n {
            let fx = (j as f64 + 0.5) * scale;
            let x0 = (fx.floor() as usize).min(g - 1);
            let tx = fx - x0 as f64;
            let at = |a: usize, b: usize| lattice[a * (g + 1) + b];
            let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
            let bot = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
            out[i * n + j] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn bounded_and_smooth() {
        let f = smooth_field(&mut rng_for(1, 0), 32, 4);
        assert!(f.iter().all(|v| (0.0..1.0).contains(v)));
        // Neighbouring cells differ by at most one lattice step over 8 cells.
        for i in 0..32 {
            for j in 0..31 {
                assert!((f[i * 32 + j] - f[i * 32 + j + 1]).abs() < 0.2);
            }
        }
    }
}
