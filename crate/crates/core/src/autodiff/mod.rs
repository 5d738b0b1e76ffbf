//! Dense reverse-mode differentiation on a tape.
//!
//! Every value is a row-major matrix (vectors are `1×n`, scalars `1×1`).
//! A [`Tape`] records each primitive together with its inputs; calling
//! [`Tape::backward`] on a scalar sweeps the tape in reverse and returns the
//! gradients of every [`Parameter`] that the scalar depends on. Parameters
//! live in a [`ParamStore`] that the tape borrows read-only, so many tapes
//! (one per batch item) can run against the same parameters at once.

mod check;
mod dd;
mod kernels;
mod optim;
mod params;
mod tape;
mod tensor;

pub use check::{finite_diff_check, finite_diff_check_reference, relative_error, GradCheck};
pub use optim::{clip_global_norm, Adam};
pub use params::{Gradients, ParamId, ParamStore, Parameter};
pub use tape::{Tape, Var};
pub use dd::DoubleDouble;
pub use tensor::{DType, Real, Storable, Tensor};
