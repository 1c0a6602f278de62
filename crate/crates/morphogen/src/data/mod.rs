//! Morphological data model: tags, aligned sentences, corpora, CoNLL-U
//! reading and writing, token-budget splits, type lexica, and tag
//! inventories.

mod conllu;
mod split;
mod types;

pub use conllu::{parse_conllu, serialize_conllu};
pub use split::{build_inventory, compile_type_lexicon, split_tokens, SplitResult};
pub use types::{
    AnnotatedSentence, Corpus, LexEntry, MorphTag, Slot, TagInventory, TypeLexicon,
};

use thiserror::Error;

/// Errors raised while building or parsing morphological data.
#[derive(Debug, Error)]
pub enum DataError {
    /// A tag or slot string did not follow the `POS;attr=val;...` format.
    #[error("malformed tag {text:?}: {detail}")]
    MalformedTag { text: String, detail: String },
    /// A CoNLL-U line could not be parsed.
    #[error("CoNLL-U parse error at line {line}: {detail}")]
    Conllu { line: usize, detail: String },
    /// Aligned sentence columns disagree or violate an invariant.
    #[error("invalid sentence: {0}")]
    InvalidSentence(String),
    /// An argument was outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type DataResult<T> = Result<T, DataError>;
