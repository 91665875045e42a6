//! Dense arrays and the reverse-mode tape used by the encoder, the loss,
//! the probes and feature inversion.

mod array;
mod tape;

pub use array::{Array, NORMALIZE_EPS};
pub(crate) use array::{dot, gemm};
#[cfg(test)]
pub(crate) use tape::gelu;
pub use tape::{Gradients, Tape, Var};
