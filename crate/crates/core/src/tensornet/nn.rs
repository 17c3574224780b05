//! Thin layer descriptors over [`Graph`] ops and [`ParameterStore`] names.

use super::graph::{Graph, Var};
use super::store::ParameterStore;
use super::tensor::Tensor;
use crate::error::Result;
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Conv {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    /// Same-padded convolution.
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        Conv {
            name: name.into(),
            cin,
            cout,
            k,
            stride,
            pad: k / 2,
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParameterStore<T>, gain: f64, rng: &mut Rng) -> Result<()> {
        store.insert_he(
            &format!("{}.w", self.name),
            &[self.cout, self.cin, self.k, self.k],
            self.cin * self.k * self.k,
            gain,
            rng,
        )?;
        store.insert(&format!("{}.b", self.name), Tensor::zeros(&[self.cout]))
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParameterStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, &format!("{}.w", self.name))?;
        let b = g.param(store, &format!("{}.b", self.name))?;
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub name: String,
    pub din: usize,
    pub dout: usize,
}

impl Dense {
    pub fn new(name: impl Into<String>, din: usize, dout: usize) -> Self {
        Dense {
            name: name.into(),
            din,
            dout,
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParameterStore<T>, gain: f64, rng: &mut Rng) -> Result<()> {
        store.insert_he(&format!("{}.w", self.name), &[self.dout, self.din], self.din, gain, rng)?;
        store.insert(&format!("{}.b", self.name), Tensor::zeros(&[self.dout]))
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParameterStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, &format!("{}.w", self.name))?;
        let b = g.param(store, &format!("{}.b", self.name))?;
        g.linear(x, w, Some(b))
    }
}

/// Slope of the leaky ReLU used between layers.
pub const LEAK: f64 = 0.1;

/// Stack of stride-2 3×3 convolutions, each followed by a leaky ReLU.
/// `forward` returns the activation of every level, finest first.
#[derive(Debug, Clone)]
pub struct Pyramid {
    pub convs: Vec<Conv>,
}

impl Pyramid {
    pub fn new(prefix: &str, cin: usize, widths: &[usize]) -> Self {
        let mut c = cin;
        let convs = widths
            .iter()
            .enumerate()
            .map(|(l, &w)| {
                let conv = Conv::new(format!("{prefix}.{l}"), c, w, 3, 2);
                c = w;
                conv
            })
            .collect();
        Pyramid { convs }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParameterStore<T>, rng: &mut Rng) -> Result<()> {
        self.convs.iter().try_for_each(|c| c.init(store, 1.0, rng))
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParameterStore<T>, x: Var) -> Result<Vec<Var>> {
        let mut out = Vec::with_capacity(self.convs.len());
        let mut h = x;
        for c in &self.convs {
            let y = c.forward(g, store, h)?;
            h = g.leaky_relu(y, LEAK);
            out.push(h);
        }
        Ok(out)
    }
}

/// Convolution followed by a leaky ReLU.
pub fn conv_act<T: Scalar>(conv: &Conv, g: &mut Graph<T>, store: &ParameterStore<T>, x: Var) -> Result<Var> {
    let y = conv.forward(g, store, x)?;
    Ok(g.leaky_relu(y, LEAK))
}
