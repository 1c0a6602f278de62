//! Minimal f64 numeric core: tensors, a reverse-mode autodiff tape,
//! recurrent cells, optimizers, parameter serialization, and seeded RNG
//! derivation.
//!
//! Everything is single-threaded and deterministic: for a fixed seed the
//! same sequence of operations produces bit-identical results run to run.

mod cell;
mod check;
mod rng;
mod serialize;
mod store;
mod tape;
mod tensor;

pub use cell::{CellKind, GruCell, LstmCell, RecurrentCell, RecurrentState};
pub use check::{finite_diff_grad, max_rel_err, rel_err_norm};
pub use rng::{derive_rng, derive_seed};
pub use serialize::{read_params, write_params};
pub use store::{ParamId, ParamStore, Parameter};
pub use tape::{dropout_mask, ParamGrads, Tape, Var};
pub use tensor::{logsumexp, softmax, Tensor};

use thiserror::Error;

/// Errors raised by the numeric core.
#[derive(Debug, Error)]
pub enum NumError {
    /// An operation was handed tensors whose shapes do not fit together.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    /// A scalar was required (e.g. the root of a backward pass).
    #[error("{op} requires a scalar, got shape {shape:?}")]
    NotScalar { op: &'static str, shape: Vec<usize> },
    /// An index was out of range for the tensor or vocabulary it addresses.
    #[error("index {index} out of range in {op} (limit {limit})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        limit: usize,
    },
    /// A parameter name was registered twice in the same store.
    #[error("duplicate parameter name {0:?}")]
    DuplicateName(String),
    /// An argument was outside its documented domain.
    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
    /// A serialized parameter file could not be decoded.
    #[error("malformed parameter file: {0}")]
    MalformedFile(String),
    /// Underlying I/O failure while reading or writing parameters.
    #[error("parameter file I/O: {0}")]
    Io(#[from] std::io::Error),
}

pub type NumResult<T> = Result<T, NumError>;
