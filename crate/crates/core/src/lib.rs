//! Numeric core for posterior-mean rectified flow experiments: tensors,
//! closed-form Gaussian oracles, degradations, a small MLP stack, the flow
//! frameworks, the Gaussian OT baseline and evaluation metrics.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below name the concrete instantiations.

// Negated comparisons double as NaN rejection.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod degrade;
pub mod dot;
pub mod error;
pub mod flows;
pub mod linalg;
pub mod metrics;
pub mod neural;
pub mod oracle;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::RngKey;
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Mlp64 = neural::MlpParams<f64>;
pub type Mlp32 = neural::MlpParams<f32>;
pub type AffineMap64 = dot::AffineMap<f64>;
pub type GaussianStats64 = dot::GaussianStats<f64>;
pub type DotModel64 = dot::DotModel<f64>;
pub type Coupling64 = flows::Coupling<f64>;
pub type NoiseModel64 = oracle::ScalarNoiseModel<f64>;
pub type NoiseModel32 = oracle::ScalarNoiseModel<f32>;
