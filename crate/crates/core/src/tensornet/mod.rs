//! Minimal reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records ops as they run; [`Graph::backward`] fills gradients.
//! Trainable tensors live in a [`ParameterStore`] under dotted names and are
//! updated with Adam. Checkpoints use the WMCK layout (see
//! [`ParameterStore::to_wmck`]).

mod gaussian;
mod graph;
mod kernels;
pub mod nn;
mod store;
mod tensor;

pub use gaussian::{gaussian_kl, reparameterize, DiagonalGaussian, LOG_SIGMA_MAX, LOG_SIGMA_MIN};
pub use graph::{sigmoid, Graph, Var, BCE_EPS};
pub use store::{AdamConfig, ParameterStore};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
