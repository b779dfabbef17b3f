//! Dense-tensor substrate: matmul, softmax, seeded RNG, MAC counting and a
//! central-difference gradient oracle.

pub mod exec;
mod grad;
mod macs;
mod ops;
mod rng;
mod tensor;

pub use grad::{finite_diff_grad, finite_diff_with, relative_error, DEFAULT_STEP};
pub use macs::{measure_macs, record_macs};
pub use ops::{axpy, dot, matmul, matmul_nt, matmul_tn, softmax_rows};
pub(crate) use ops::{matmul_nt_slices, matmul_slices, matmul_tn_slices, softmax_in_place};
pub use rng::Rng;
pub use tensor::Tensor;
