//! Central finite-difference oracle for every differentiable op.
//!
//! Each case builds a scalar from its inputs; for non-scalar op outputs the
//! scalar is `sum(out * R)` with a fixed random `R`, which exercises the full
//! vector-Jacobian product.

use wm_core::rng::rng_for;
use wm_core::tensornet::{Graph, Tensor, Var};
use wm_core::Result;

#[derive(Clone, Copy, Debug)]
pub enum Domain {
    /// Standard normal, kept away from zero so kinks are not straddled.
    Normal,
    Positive,
    /// Uniform in (0.05, 0.95).
    Prob,
    /// Constant {0, 1} target; not differentiated.
    Binary,
}

pub struct GradCase {
    pub name: &'static str,
    pub domains: Vec<Domain>,
    pub shapes: Vec<Vec<Vec<usize>>>,
    pub f: fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
}

fn sample(domain: Domain, shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = rng_for(seed, 77);
    let n = Tensor::<f64>::randn(shape, &mut rng);
    match domain {
        Domain::Normal => n.map(|v| if v.abs() < 0.05 { v.signum() * 0.05 + v } else { v }),
        Domain::Positive => n.map(|v| 0.2 + v.abs()),
        Domain::Prob => n.map(|v| 0.05 + 0.9 / (1.0 + (-v).exp())),
        Domain::Binary => n.map(|v| if v > 0.0 { 1.0 } else { 0.0 }),
    }
}

fn scalarize(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    if g.value(out).len() == 1 && g.shape(out).is_empty() {
        return Ok(out);
    }
    let shape = g.shape(out).to_vec();
    let r = g.constant(Tensor::randn(&shape, &mut rng_for(seed, 991)));
    let p = g.mul(out, r)?;
    Ok(g.sum(p))
}

fn eval(case: &GradCase, inputs: &[Tensor<f64>], seed: u64) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .zip(&case.domains)
        .map(|(t, d)| match d {
            Domain::Binary => g.constant(t.clone()),
            _ => g.leaf(t.clone()),
        })
        .collect();
    let out = (case.f)(&mut g, &vars)?;
    let s = scalarize(&mut g, out, seed)?;
    Ok(g.item(s))
}

/// Relative error `|a - n| / (|a| + |n|)` (L2 norms) for one shape set; max over inputs.
pub fn check_case(case: &GradCase, shape_set: usize, seed: u64, h: f64) -> Result<f64> {
    let shapes = &case.shapes[shape_set];
    let inputs: Vec<Tensor<f64>> = shapes
        .iter()
        .zip(&case.domains)
        .enumerate()
        .map(|(i, (s, d))| sample(*d, s, seed.wrapping_add(i as u64 * 31)))
        .collect();

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .zip(&case.domains)
        .map(|(t, d)| match d {
            Domain::Binary => g.constant(t.clone()),
            _ => g.leaf(t.clone()),
        })
        .collect();
    let out = (case.f)(&mut g, &vars)?;
    let s = scalarize(&mut g, out, seed)?;
    g.backward(s)?;

    let mut worst: f64 = 0.0;
    for (idx, d) in case.domains.iter().enumerate() {
        if matches!(d, Domain::Binary) {
            continue;
        }
        let analytic: Vec<f64> = g
            .grad(vars[idx])
            .map(|v| v.to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[idx].len()]);
        let mut numeric = Vec::with_capacity(analytic.len());
        for k in 0..inputs[idx].len() {
            let mut plus = inputs.to_vec();
            plus[idx].data_mut()[k] += h;
            let mut minus = inputs.to_vec();
            minus[idx].data_mut()[k] -= h;
            numeric.push((eval(case, &plus, seed)? - eval(case, &minus, seed)?) / (2.0 * h));
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let rel = if na + nn == 0.0 { 0.0 } else { diff / (na + nn) };
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn nchw(n: usize, c: usize, h: usize, w: usize) -> Vec<usize> {
    vec![n, c, h, w]
}

pub fn cases() -> Vec<GradCase> {
    use Domain::*;
    let ew3 = || vec![vec![vec![7]], vec![vec![2, 3, 4]], vec![nchw(2, 2, 3, 3)]];
    let ew3x2 = || {
        vec![
            vec![vec![7], vec![7]],
            vec![vec![2, 3, 4], vec![2, 3, 4]],
            vec![nchw(2, 2, 3, 3), nchw(2, 2, 3, 3)],
        ]
    };
    vec![
        GradCase {
            name: "conv2d",
            domains: vec![Normal, Normal, Normal],
            shapes: vec![
                vec![nchw(1, 2, 5, 5), nchw(3, 2, 3, 3), vec![3]],
                vec![nchw(2, 3, 6, 4), nchw(2, 3, 3, 3), vec![2]],
                vec![nchw(2, 1, 4, 4), nchw(2, 1, 1, 1), vec![2]],
            ],
            f: |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, v[1].clone_pad(g)),
        },
        GradCase {
            name: "conv2d_stride2",
            domains: vec![Normal, Normal, Normal],
            shapes: vec![
                vec![nchw(1, 2, 6, 6), nchw(3, 2, 3, 3), vec![3]],
                vec![nchw(2, 2, 7, 5), nchw(2, 2, 3, 3), vec![2]],
                vec![nchw(1, 3, 8, 8), nchw(4, 3, 3, 3), vec![4]],
            ],
            f: |g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1),
        },
        GradCase {
            name: "nearest_upsample2x",
            domains: vec![Normal],
            shapes: vec![vec![nchw(1, 1, 2, 2)], vec![nchw(2, 3, 3, 2)], vec![nchw(1, 2, 4, 4)]],
            f: |g, v| g.upsample2x(v[0]),
        },
        GradCase {
            name: "linear",
            domains: vec![Normal, Normal, Normal],
            shapes: vec![
                vec![vec![1, 3], vec![2, 3], vec![2]],
                vec![vec![4, 5], vec![3, 5], vec![3]],
                vec![vec![2, 8], vec![6, 8], vec![6]],
            ],
            f: |g, v| g.linear(v[0], v[1], Some(v[2])),
        },
        GradCase {
            name: "relu",
            domains: vec![Normal],
            shapes: ew3(),
            f: |g, v| Ok(g.relu(v[0])),
        },
        GradCase {
            name: "leaky_relu",
            domains: vec![Normal],
            shapes: ew3(),
            f: |g, v| Ok(g.leaky_relu(v[0], 0.1)),
        },
        GradCase {
            name: "sigmoid",
            domains: vec![Normal],
            shapes: ew3(),
            f: |g, v| Ok(g.sigmoid(v[0])),
        },
        GradCase {
            name: "tanh",
            domains: vec![Normal],
            shapes: ew3(),
            f: |g, v| Ok(g.tanh(v[0])),
        },
        GradCase {
            name: "exp",
            domains: vec![Normal],
            shapes: ew3(),
            f: |g, v| Ok(g.exp(v[0])),
        },
        GradCase {
            name: "log",
            domains: vec![Positive],
            shapes: ew3(),
            f: |g, v| Ok(g.log(v[0])),
        },
        GradCase {
            name: "square",
            domains: vec![Normal],
            shapes: ew3(),
            f: |g, v| Ok(g.square(v[0])),
        },
        GradCase {
            name: "abs",
            domains: vec![Normal],
            shapes: ew3(),
            f: |g, v| Ok(g.abs(v[0])),
        },
        GradCase {
            name: "scale",
            domains: vec![Normal],
            shapes: ew3(),
            f: |g, v| Ok(g.scale(v[0], -1.7)),
        },
        GradCase {
            name: "add_scalar",
            domains: vec![Normal],
            shapes: ew3(),
            f: |g, v| Ok(g.add_scalar(v[0], 0.3)),
        },
        GradCase {
            name: "clamp",
            domains: vec![Normal],
            shapes: ew3(),
            f: |g, v| Ok(g.clamp(v[0], -0.71, 0.83)),
        },
        GradCase {
            name: "add",
            domains: vec![Normal, Normal],
            shapes: ew3x2(),
            f: |g, v| g.add(v[0], v[1]),
        },
        GradCase {
            name: "sub",
            domains: vec![Normal, Normal],
            shapes: ew3x2(),
            f: |g, v| g.sub(v[0], v[1]),
        },
        GradCase {
            name: "mul",
            domains: vec![Normal, Normal],
            shapes: ew3x2(),
            f: |g, v| g.mul(v[0], v[1]),
        },
        GradCase {
            name: "mul_same_input",
            domains: vec![Normal],
            shapes: ew3(),
            f: |g, v| g.mul(v[0], v[0]),
        },
        GradCase {
            name: "concat_channels",
            domains: vec![Normal, Normal],
            shapes: vec![
                vec![vec![2, 3], vec![2, 1]],
                vec![nchw(1, 2, 3, 3), nchw(1, 1, 3, 3)],
                vec![nchw(2, 1, 2, 4), nchw(2, 3, 2, 4)],
            ],
            f: |g, v| g.concat_channels(&[v[0], v[1]]),
        },
        GradCase {
            name: "slice_channels",
            domains: vec![Normal],
            shapes: vec![vec![vec![2, 5]], vec![nchw(1, 4, 3, 3)], vec![nchw(2, 6, 2, 2)]],
            f: |g, v| g.slice_channels(v[0], 1, 2),
        },
        GradCase {
            name: "reshape",
            domains: vec![Normal],
            shapes: vec![vec![vec![2, 6]], vec![vec![3, 4]], vec![nchw(1, 2, 2, 3)]],
            f: |g, v| g.reshape(v[0], &[12]),
        },
        GradCase {
            name: "tile_spatial",
            domains: vec![Normal],
            shapes: vec![vec![vec![1, 2]], vec![vec![2, 3]], vec![vec![3, 1]]],
            f: |g, v| g.tile_spatial(v[0], 2, 3),
        },
        GradCase {
            name: "sum",
            domains: vec![Normal],
            shapes: ew3(),
            f: |g, v| {
                let sq = g.square(v[0]);
                Ok(g.sum(sq))
            },
        },
        GradCase {
            name: "mean",
            domains: vec![Normal],
            shapes: ew3(),
            f: |g, v| {
                let sq = g.square(v[0]);
                Ok(g.mean(sq))
            },
        },
        GradCase {
            name: "reparameterize",
            domains: vec![Normal, Normal],
            shapes: ew3x2(),
            f: |g, v| {
                let shape = g.shape(v[0]).to_vec();
                let noise = Tensor::randn(&shape, &mut rng_for(5, 5));
                g.reparameterize(v[0], v[1], &noise)
            },
        },
        GradCase {
            name: "gaussian_kl",
            domains: vec![Normal, Normal, Normal, Normal],
            shapes: vec![vec![vec![3]; 4], vec![vec![2, 4]; 4], vec![nchw(1, 2, 2, 2); 4]],
            f: |g, v| g.gaussian_kl(v[0], v[1], v[2], v[3]),
        },
        GradCase {
            name: "bce",
            domains: vec![Prob, Binary],
            shapes: ew3x2(),
            f: |g, v| g.bce(v[0], v[1]),
        },
        GradCase {
            name: "bce_logits_sum",
            domains: vec![Normal, Binary, Binary],
            shapes: vec![vec![vec![5]; 3], vec![vec![2, 3]; 3], vec![nchw(1, 1, 3, 3); 3]],
            f: |g, v| g.bce_logits_sum(v[0], v[1], Some(v[2])),
        },
    ]
}

/// Padding helper for the same-padded conv case: `k / 2`.
trait ClonePad {
    fn clone_pad(&self, g: &Graph<f64>) -> usize;
}

impl ClonePad for Var {
    fn clone_pad(&self, g: &Graph<f64>) -> usize {
        g.shape(*self)[2] / 2
    }
}
