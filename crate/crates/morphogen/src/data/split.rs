use super::types::{AnnotatedSentence, Corpus, LexEntry, TagInventory, TypeLexicon};
use super::{DataError, DataResult};

/// Result of a token-budget split.
#[derive(Debug, Clone)]
pub struct SplitResult {
    pub corpus: Corpus,
    /// Tokens actually in the labeled portion (>= the budget unless short).
    pub labeled_tokens: usize,
    /// True when the input had fewer tokens than the budget, in which case
    /// everything is labeled and the unlabeled portion is empty.
    pub shortfall: bool,
}

/// Split sentences into a labeled prefix and an unlabeled remainder.
///
/// The labeled portion is the minimal whole-sentence prefix whose token
/// count reaches `budget` (so sentences are never cut). Every later
/// sentence contributes only its forms to the unlabeled portion — the gold
/// lemmata and tags are discarded. `budget` must be at least 1.
pub fn split_tokens(sentences: Vec<AnnotatedSentence>, budget: usize) -> DataResult<SplitResult> {
    if budget == 0 {
        return Err(DataError::InvalidArgument(
            "token budget must be at least 1".into(),
        ));
    }
    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    let mut labeled_tokens = 0;
    for s in sentences {
        if labeled_tokens < budget {
            labeled_tokens += s.len();
            labeled.push(s);
        } else {
            unlabeled.push(s.forms().to_vec());
        }
    }
    let shortfall = labeled_tokens < budget;
    Ok(SplitResult {
        corpus: Corpus { labeled, unlabeled },
        labeled_tokens,
        shortfall,
    })
}

/// Gather every distinct (form, lemma, tag) triple from the sentences.
pub fn compile_type_lexicon(sentences: &[AnnotatedSentence]) -> TypeLexicon {
    let mut lex = TypeLexicon::new();
    for s in sentences {
        for (form, lemma, tag) in s.tokens() {
            lex.insert(LexEntry {
                form: form.to_string(),
                lemma: lemma.to_string(),
                tag: tag.clone(),
            });
        }
    }
    lex
}

/// Gather the tag inventory (whole tags, POS set, attribute–value pairs)
/// observed in the sentences.
pub fn build_inventory(sentences: &[AnnotatedSentence]) -> TagInventory {
    let mut inv = TagInventory::default();
    for s in sentences {
        for tag in s.tags() {
            inv.observe(tag);
        }
    }
    inv
}
