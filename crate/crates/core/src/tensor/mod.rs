//! Dense `f64` tensors and a tape-based reverse-mode differentiator.

mod kernels;
mod tape;
mod value;

pub use tape::{sigmoid, std_normal_cdf, AttentionMap, Tape, Var};
pub use value::Tensor;
