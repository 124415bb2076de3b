//! Dense numeric primitives, a reverse-mode gradient tape, and a
//! finite-difference checker.

mod gradcheck;
mod matrix;
mod ops;
mod tape;

pub use gradcheck::{grad_check, grad_check_at, relative_error, GradCheckReport};
pub use matrix::{Matrix, Real};
pub use ops::{affine, gelu, gelu_grad, layer_norm, masked_softmax, sigmoid, LayerNormCache, LAYER_NORM_EPS};
pub use tape::{Grads, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("{op}: incompatible shapes {}×{} and {}×{}", left.0, left.1, right.0, right.1)]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("every key position is masked")]
    AllMasked,
    #[error("analytic gradient is not finite at coordinate {index}")]
    NonFiniteGradient { index: usize },
    #[error("{0}")]
    InvalidArgument(String),
}
