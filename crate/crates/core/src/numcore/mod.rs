//! Dense real matrices with reverse-mode differentiation.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{analytic_grads, grad_check};
pub use tape::{Tape, Var};
pub use tensor::{
    cosine_sim_matrix, ln_clamped, log_clamped, matmul, softmax_rows, softmax_slice, Tensor, LOG_EPS, NORM_EPS,
};
