//! Self-supervised predictive world model for partially observed road
//! environments: synthetic worlds, simulated lidar, ICP registration, BEV
//! fusion, two-stage training and evaluation.

pub mod augment;
pub mod bevgrid;
pub mod error;
pub mod field;
pub mod harness;
pub mod pnm;
pub mod register;
pub mod rng;
pub mod scalar;
pub mod sensim;
pub mod statecomplete;
pub mod synthworld;
pub mod tensornet;
pub mod worldmodel;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensornet::Tensor<f32>;
pub type Tensor64 = tensornet::Tensor<f64>;
pub type Transform2f = register::Transform2<f32>;
pub type Transform2d = register::Transform2<f64>;
pub type Grid32 = bevgrid::ProbabilisticGrid<f32>;
pub type Grid64 = bevgrid::ProbabilisticGrid<f64>;
pub type State32 = bevgrid::StateTensor<f32>;
pub type State64 = bevgrid::StateTensor<f64>;
pub type Slvm32 = statecomplete::SlvmModel<f32>;
pub type Adv32 = statecomplete::AdvModel<f32>;
pub type Hvae32 = worldmodel::HvaeModel<f32>;
pub type Hvae64 = worldmodel::HvaeModel<f64>;
