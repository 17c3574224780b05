use super::*;
use crate::rng::rng_for;
use crate::Error;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape, data.to_vec()).unwrap()
}

#[test]
fn identity_1x1_conv_is_noop() {
    let mut rng = rng_for(3, 0);
    let x = Tensor::<f64>::randn(&[2, 3, 5, 4], &mut rng);
    let mut w = vec![0.0; 9];
    for c in 0..3 {
        w[c * 3 + c] = 1.0;
    }
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let wv = g.constant(t(&[3, 3, 1, 1], &w));
    let y = g.conv2d(xv, wv, None, 1, 0).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn all_ones_3x3_conv_center_is_nine() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::ones(&[1, 1, 5, 5]));
    let w = g.constant(Tensor::ones(&[1, 1, 3, 3]));
    let y = g.conv2d(x, w, None, 1, 1).unwrap();
    let v = g.value(y);
    assert_eq!(v.shape(), &[1, 1, 5, 5]);
    assert_eq!(v.data()[2 * 5 + 2], 9.0);
    assert_eq!(v.data()[0], 4.0);
    assert_eq!(v.data()[2], 6.0);
}

#[test]
fn strided_conv_output_shape() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::ones(&[1, 2, 64, 64]));
    let w = g.constant(Tensor::ones(&[4, 2, 3, 3]));
    let y = g.conv2d(x, w, None, 2, 1).unwrap();
    assert_eq!(g.shape(y), &[1, 4, 32, 32]);
}

#[test]
fn relu_zeroes_negatives() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[3], &[-1.0, -0.5, 2.0]));
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn shape_mismatch_reports_both_shapes() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[3, 2]));
    let err = g.add(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Domain(_)));
    assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
}

#[test]
fn sum_grad_is_ones() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[2, 2], &[1.0, -2.0, 3.0, 0.5]));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0; 4]);
}

#[test]
fn mean_of_square_grad() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::scalar(3.0));
    let sq = g.square(x);
    let m = g.mean(sq);
    g.backward(m).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[6.0]);
}

#[test]
fn backward_twice_is_state_error() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::scalar(1.0));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert!(matches!(g.backward(s), Err(Error::State(_))));
    g.zero_grad();
    g.backward(s).unwrap();
}

#[test]
fn backward_requires_scalar() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::zeros(&[2]));
    assert!(matches!(g.backward(x), Err(Error::Domain(_))));
}

#[test]
fn reparameterize_examples() {
    let mut g = Graph::<f64>::new();
    let mu = g.leaf(t(&[4], &[0.5, -1.0, 2.0, 0.0]));
    let ls = g.leaf(Tensor::zeros(&[4]));
    let q = DiagonalGaussian::new(&mut g, mu, ls).unwrap();
    let z0 = reparameterize(&mut g, &q, &Tensor::zeros(&[4])).unwrap();
    assert_eq!(g.value(z0).data(), g.value(mu).data());
    let z1 = reparameterize(&mut g, &q, &Tensor::ones(&[4])).unwrap();
    assert_eq!(g.value(z1).data(), &[1.5, 0.0, 3.0, 1.0]);
    let m = g.mean(z1);
    g.backward(m).unwrap();
    assert_eq!(g.grad(mu).unwrap(), &[0.25; 4]);
}

#[test]
fn reparameterize_shape_mismatch() {
    let mut g = Graph::<f64>::new();
    let mu = g.leaf(Tensor::zeros(&[4]));
    let ls = g.leaf(Tensor::zeros(&[4]));
    let q = DiagonalGaussian::new(&mut g, mu, ls).unwrap();
    assert!(reparameterize(&mut g, &q, &Tensor::zeros(&[3])).is_err());
}

#[test]
fn log_sigma_is_clamped() {
    let mut g = Graph::<f64>::new();
    let mu = g.leaf(Tensor::zeros(&[3]));
    let ls = g.leaf(t(&[3], &[-20.0, 0.3, 9.0]));
    let q = DiagonalGaussian::new(&mut g, mu, ls).unwrap();
    assert_eq!(g.value(q.log_sigma).data(), &[-7.0, 0.3, 5.0]);
}

fn kl_of(qm: f64, ql: f64, pm: f64, pl: f64) -> f64 {
    let mut g = Graph::<f64>::new();
    let q = DiagonalGaussian {
        mu: g.constant(Tensor::scalar(qm)),
        log_sigma: g.constant(Tensor::scalar(ql)),
    };
    let p = DiagonalGaussian {
        mu: g.constant(Tensor::scalar(pm)),
        log_sigma: g.constant(Tensor::scalar(pl)),
    };
    let k = gaussian_kl(&mut g, &q, &p).unwrap();
    g.item(k)
}

#[test]
fn gaussian_kl_spot_values() {
    assert_eq!(kl_of(0.3, -0.2, 0.3, -0.2), 0.0);
    assert!((kl_of(1.0, 0.0, 0.0, 0.0) - 0.5).abs() < 1e-12);
    // q = N(0, e), p = N(0, 1): log(1/e) + e^2 / 2 - 1/2
    let e = std::f64::consts::E;
    let expected = -1.0 + e * e / 2.0 - 0.5;
    assert!((kl_of(0.0, 1.0, 0.0, 0.0) - expected).abs() < 1e-12);
}

#[test]
fn gaussian_kl_shape_mismatch() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(&[2]));
    let b = g.constant(Tensor::zeros(&[3]));
    assert!(g.gaussian_kl(a, a, b, b).is_err());
}

#[test]
fn bce_examples() {
    let mut g = Graph::<f64>::new();
    let target = g.constant(t(&[4], &[1.0, 0.0, 1.0, 0.0]));
    let same = g.constant(t(&[4], &[1.0, 0.0, 1.0, 0.0]));
    let l = g.bce(same, target).unwrap();
    assert!(g.item(l) <= 1e-6);
    let half = g.constant(Tensor::full(&[4], 0.5));
    let l = g.bce(half, target).unwrap();
    assert!((g.item(l) - std::f64::consts::LN_2).abs() < 1e-12);
    let bad = g.constant(t(&[4], &[0.0, 1.0, 0.0, 1.0]));
    let l = g.bce(bad, target).unwrap();
    assert!(g.item(l).is_finite());
    let wrong = g.constant(Tensor::zeros(&[3]));
    assert!(g.bce(wrong, target).is_err());
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = rng_for(11, 0);
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::randn(&[2, 3, 8, 8], &mut rng));
        let w = g.leaf(Tensor::randn(&[4, 3, 3, 3], &mut rng));
        let y = g.conv2d(x, w, None, 2, 1).unwrap();
        let y = g.sigmoid(y);
        let l = g.mean(y);
        g.backward(l).unwrap();
        (
            g.item(l).to_bits(),
            g.grad(w).unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn inference_graph_params_have_no_grad() {
    let mut s = ParameterStore::<f32>::new();
    s.insert("w", Tensor::ones(&[2])).unwrap();
    let mut g = Graph::inference();
    let w = g.param(&s, "w").unwrap();
    assert!(!g.requires_grad(w));
}
