//! Reverse-mode automatic differentiation over small dense tensors.
//!
//! A [`Tape`] records every operation of a forward pass; [`Tape::backward`]
//! then returns gradients for all recorded values. Parameters live in a
//! [`ParameterSet`] and are loaded onto a tape either as trainable leaves
//! ([`Tape::param`]) or as constants ([`Tape::frozen_param`]). Randomness is
//! never generated here: sampling ops take their noise as inputs.

pub mod checkpoint;
pub mod dist;
pub mod gradcheck;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use dist::{
    bernoulli_log_prob, categorical_entropy, gaussian_sample_logprob, kl_diag_gaussian,
    kl_per_row, unit_gaussian_log_prob, DiagonalGaussian,
};
pub use gradcheck::{check_gradients, max_gradient_magnitude, GradCheck, GradCheckReport};
pub use optim::{adam_step, global_norm, AdamConfig, Parameter, ParameterSet, StepReport};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {0:?}: dimensions must be positive")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} needs {} values, got {got}", shape.iter().product::<usize>())]
    ValueCount { shape: Vec<usize>, got: usize },
    #[error("rows have differing lengths")]
    RaggedRows,
    #[error("concatenation of zero tensors")]
    EmptyConcat,
    #[error("{op}: domain error ({detail})")]
    Domain { op: &'static str, detail: String },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
