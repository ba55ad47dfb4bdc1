pub mod agent;
pub mod autodiff;
pub mod error;
pub mod eval;
pub mod nn;
pub mod replay;
pub mod run;
pub mod scalar;
pub mod sim;
pub mod world_model;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision instances of the scalar-generic types.
pub type Tensor = autodiff::Tensor<f64>;
pub type Tape = autodiff::Tape<f64>;
pub type ParameterSet = autodiff::ParameterSet<f64>;
pub type Gradients = autodiff::Gradients<f64>;
pub type Checkpoint = autodiff::Checkpoint<f64>;
pub type LatentSnapshot = world_model::LatentSnapshot<f64>;
pub type SequenceBatch = world_model::SequenceBatch<f64>;
pub type ImagineNoise = world_model::ImagineNoise<f64>;
