//! Deterministic federated-learning simulator core.
//!
//! The crate provides a small numeric stack (row-major matrices, dense
//! layers, softmax/cross-entropy with analytic gradients, SGD with
//! momentum), the drift-regularized classifier family, synthetic and
//! file-based datasets with a Dirichlet non-IID partitioner, the federated
//! orchestration loop (FedAvg, FedProx, FedAvgM, LfD), and evaluation
//! diagnostics (accuracy, KL traces, linear CKA, learning-performance
//! forgetting scores).
//!
//! All math is generic over the [`scalar::Scalar`] type; the simulator
//! pipeline and the concrete aliases below use `f64`. Every random choice
//! flows through the portable generator in [`rng`], so runs replay
//! bit-identically from their seeds.

pub mod checkpoint;
pub mod data;
pub mod drift;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod partition;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Concrete `f64` aliases for the generic core types.
pub type Matrix = tensor::Matrix<f64>;
pub type Matrix32 = tensor::Matrix<f32>;
pub type DenseLayer = nn::DenseLayer<f64>;
pub type SgdState = optim::SgdState<f64>;
pub type ClassifierModel = model::ClassifierModel<f64>;
pub type HeadKind = model::HeadKind<f64>;
pub type Dataset = data::Dataset<f64>;
pub type DriftRecord = drift::DriftRecord<f64>;
