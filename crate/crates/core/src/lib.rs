//! Image relative position encoding (iRPE) for multi-head self-attention.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: dense tensors, matmul, softmax, MAC counting, finite differences.
//! * [`index_fn`]: clip and piecewise index functions, distance quantization.
//! * [`bucket_map`]: the four 2-D relative-position-to-bucket mappings.
//! * [`encoding`]: learnable tables, bias/contextual logits (naive and
//!   gather-based), the value path and their backward passes.
//! * [`attention`]: a multi-head self-attention block with absolute,
//!   relative and baseline position encodings, forward and backward.
//! * [`analysis`]: MAC accounting, benchmarks and CSV/PPM exports.
//!
//! With the default `parallel` feature, row loops run on rayon.

pub mod analysis;
pub mod attention;
pub mod bucket_map;
pub mod encoding;
pub mod error;
pub mod index_fn;
pub mod numerics;

pub use error::{IrpeError, Result};
