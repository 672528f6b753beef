//! Dense tensors, a reverse-mode tape, symmetric linear algebra, and a
//! finite-difference oracle.

mod gradcheck;
mod graph;
pub mod linalg;
mod regression;
pub mod rng;
mod tensor;

pub use gradcheck::{finite_diff_grad, relative_error};
pub use graph::{Graph, Var};
pub use regression::{least_squares_line, LineFit};
pub use linalg::{covariance, log_det_psd, log_det_psd_with, spd_solve, Factorization};
pub use tensor::{dot, matmul_values, norm, transpose_values, Tensor};
