//! Dense `f64` arrays, a reverse-mode tape, named parameters, and checkpoints.

pub mod checkpoint;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{
    compare_with_finite_differences, grad_check, relative_error, CoordinateError, GradCheckReport,
    RELATIVE_ERROR_FLOOR,
};
pub use params::{Gradients, ParamId, ParamStore, Parameter};
pub use tape::{log_sigmoid, log_softmax, log_sum_exp, sigmoid, softmax, PrimitiveKind, Tape, Var};
pub use tensor::Tensor;
