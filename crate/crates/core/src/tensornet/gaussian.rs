use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;
use crate::scalar::Scalar;

/// Bounds applied to `log_sigma` whenever a [`DiagonalGaussian`] is built.
pub const LOG_SIGMA_MIN: f64 = -7.0;
pub const LOG_SIGMA_MAX: f64 = 5.0;

/// Diagonal Gaussian whose parameters live in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiagonalGaussian {
    pub mu: Var,
    pub log_sigma: Var,
}

impl DiagonalGaussian {
    /// Clamps `log_sigma` to `[-7, 5]`; shapes must agree.
    pub fn new<T: Scalar>(g: &mut Graph<T>, mu: Var, log_sigma: Var) -> Result<Self> {
        if g.shape(mu) != g.shape(log_sigma) {
            return Err(crate::Error::domain(format!(
                "gaussian: mu {:?} vs log_sigma {:?}",
                g.shape(mu),
                g.shape(log_sigma)
            )));
        }
        let log_sigma = g.clamp(log_sigma, LOG_SIGMA_MIN, LOG_SIGMA_MAX);
        Ok(DiagonalGaussian { mu, log_sigma })
    }

    /// Splits a head output with `2 * c` channels into `(mu, log_sigma)`.
    pub fn from_head<T: Scalar>(g: &mut Graph<T>, head: Var, c: usize) -> Result<Self> {
        let mu = g.slice_channels(head, 0, c)?;
        let ls = g.slice_channels(head, c, c)?;
        Self::new(g, mu, ls)
    }

    /// Unit Gaussian with the given shape (constants, no gradient).
    pub fn standard<T: Scalar>(g: &mut Graph<T>, shape: &[usize]) -> Self {
        let mu = g.constant(Tensor::zeros(shape));
        let log_sigma = g.constant(Tensor::zeros(shape));
        DiagonalGaussian { mu, log_sigma }
    }

    /// Stop-gradient copy of both parameters.
    pub fn detach<T: Scalar>(&self, g: &mut Graph<T>) -> Self {
        DiagonalGaussian {
            mu: g.detach(self.mu),
            log_sigma: g.detach(self.log_sigma),
        }
    }

    pub fn shape<'a, T: Scalar>(&self, g: &'a Graph<T>) -> &'a [usize] {
        g.shape(self.mu)
    }
}

/// `z = mu + exp(log_sigma) * noise`
pub fn reparameterize<T: Scalar>(g: &mut Graph<T>, q: &DiagonalGaussian, noise: &Tensor<T>) -> Result<Var> {
    g.reparameterize(q.mu, q.log_sigma, noise)
}

/// Summed closed-form `KL(q || p)`.
pub fn gaussian_kl<T: Scalar>(g: &mut Graph<T>, q: &DiagonalGaussian, p: &DiagonalGaussian) -> Result<Var> {
    g.gaussian_kl(q.mu, q.log_sigma, p.mu, p.log_sigma)
}
