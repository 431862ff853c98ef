//! Dense `f64` tensors, a reverse-mode gradient tape and Adam.

mod adam;
pub(crate) mod kernels;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use tape::{GradTape, Gradients, ParamKey, Var};
pub use tensor::{softmax, softmax_cross_entropy, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum NumError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("expected {expected} elements, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("index {index} out of range (bound {bound})")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("variable was not recorded on this tape")]
    TapeMismatch,
    #[error("expected a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("cross-entropy needs at least one target row")]
    EmptyTargets,
}
