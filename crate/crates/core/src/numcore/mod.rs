//! Dense `f64` numerics: tensors, the handful of differentiable operations
//! the encoder needs, Adam, and a finite-difference gradient checker.

pub mod adam;
pub mod gradcheck;
pub mod kernels;
pub mod ops;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, FD_STEP, FD_STEPS, KINK_TOL};
pub use ops::{
    layer_norm, layer_norm_backward, matmul, matmul_backward, softmax_rows,
    softmax_rows_backward, EPS_LN,
};
pub use tensor::Tensor;
