//! Training of fixed-topology, directly-encoded neural networks with a
//! limited-evaluation evolutionary algorithm, plus a backpropagation
//! baseline, batched so that an entire population is evaluated as one
//! tensor computation.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod evo;
pub mod experiment;
pub mod fitness;
pub mod grad;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod tensor;

pub use scalar::Scalar;
pub use tensor::{Tensor, TensorError};

/// Production element type used by the CLI and experiment drivers.
pub type Tensor32 = Tensor<f32>;
/// Wide element type used by high-precision test oracles.
pub type Tensor64 = Tensor<f64>;
/// Dataset in the production element type.
pub type Dataset32 = data::Dataset<f32>;
/// Population parameters in the production element type.
pub type Population32 = model::PopulationParams<f32>;
/// Evolution state in the production element type.
pub type EvalState32 = evo::EvalState<f32>;
