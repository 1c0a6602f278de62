//! A generative latent-variable model of inflected word sequences.
//!
//! The joint model factors a sentence of inflected forms into three
//! neural components — a morphological tag language model, a tag-conditioned
//! lemma generator, and a lemma+tag-to-form inflector — tied together by a
//! linear-chain CRF that jointly tags and lemmatizes observed forms. The two
//! directions are trained against each other with a semi-supervised
//! wake-sleep loop: the generative side dreams training material for the
//! CRF, and the CRF imputes latent lemmata and tags for unlabeled text that
//! the generative side then trains on.
//!
//! Module map:
//! - [`num`]: tensors, reverse-mode autodiff tape, recurrent cells,
//!   optimizers, parameter serialization, seeded RNG derivation.
//! - [`data`]: morphological tags, sentences, corpora, CoNLL-U reading and
//!   writing, token-budget splits, type lexica.
//! - [`taglm`]: LSTM language model over morphological tag sequences.
//! - [`lemmagen`]: character-level LSTM lemma generator conditioned on POS.
//! - [`inflector`]: attentional sequence-to-sequence inflection model.
//! - [`crf`]: edit trees, feature extraction, and the linear-chain CRF used
//!   as the inference network.
//! - [`wakesleep`]: the alternating training loop and its phase bookkeeping.
//! - [`eval`]: type-level accuracy evaluation and reports.
//! - [`synth`]: a deterministic synthetic suffixing language for benchmarks
//!   and end-to-end tests.

pub mod crf;
pub mod data;
pub mod eval;
pub mod inflector;
pub mod lemmagen;
pub mod num;
pub mod synth;
pub mod taglm;
pub mod wakesleep;

use thiserror::Error;

/// Errors raised by model construction, training, inference, and I/O.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Num(#[from] num::NumError),
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    /// A model file or sidecar could not be decoded or did not match the
    /// architecture it was loaded into.
    #[error("malformed model file: {0}")]
    MalformedModel(String),
    /// A sampling loop hit its guard because the model collapsed (e.g. it
    /// keeps producing empty sequences).
    #[error("degenerate model: {0}")]
    Degenerate(String),
    /// Configuration values outside their documented domain.
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type ModelResult<T> = Result<T, ModelError>;
