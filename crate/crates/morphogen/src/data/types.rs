use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{DataError, DataResult};

/// A bundle of attribute–value pairs (e.g. case=Dat, number=Plur).
///
/// Attribute names are canonicalized to lowercase and held in sorted order,
/// so two slots built from differently-ordered pair lists compare and print
/// identically. Values are kept verbatim.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Slot(BTreeMap<String, String>);

impl Slot {
    pub fn empty() -> Self {
        Slot(BTreeMap::new())
    }

    /// Build from attribute–value pairs. Duplicate attribute names (after
    /// lowercasing) are rejected; empty names or values are rejected.
    pub fn from_pairs<I>(pairs: I) -> DataResult<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut map = BTreeMap::new();
        for (attr, val) in pairs {
            let attr = attr.to_lowercase();
            if attr.is_empty() || val.is_empty() {
                return Err(DataError::MalformedTag {
                    text: format!("{attr}={val}"),
                    detail: "empty attribute or value".into(),
                });
            }
            if map.insert(attr.clone(), val).is_some() {
                return Err(DataError::MalformedTag {
                    text: attr,
                    detail: "duplicate attribute".into(),
                });
            }
        }
        Ok(Slot(map))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Pairs in canonical (sorted-attribute) order.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(a, v)| (a.as_str(), v.as_str()))
    }

    pub fn get(&self, attr: &str) -> Option<&str> {
        self.0.get(attr).map(|s| s.as_str())
    }
}

impl fmt::Display for Slot {
    /// `a=v;b=w` in sorted attribute order; empty slot prints as nothing.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (a, v) in &self.0 {
            if !first {
                write!(f, ";")?;
            }
            write!(f, "{a}={v}")?;
            first = false;
        }
        Ok(())
    }
}

/// A morphological tag: part of speech plus a slot of attribute–value
/// pairs. Wire format `POS;a=v;b=w` (pairs sorted; bare `POS` when the slot
/// is empty).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MorphTag {
    pub pos: String,
    pub slot: Slot,
}

impl MorphTag {
    pub fn new(pos: impl Into<String>, slot: Slot) -> DataResult<Self> {
        let pos = pos.into();
        if pos.is_empty() {
            return Err(DataError::MalformedTag {
                text: String::new(),
                detail: "empty part of speech".into(),
            });
        }
        if pos.contains(';') || pos.contains('=') {
            return Err(DataError::MalformedTag {
                text: pos,
                detail: "part of speech may not contain ';' or '='".into(),
            });
        }
        Ok(MorphTag { pos, slot })
    }

    /// POS-only tag with an empty slot.
    pub fn bare(pos: impl Into<String>) -> DataResult<Self> {
        MorphTag::new(pos, Slot::empty())
    }

    /// Parse the wire format `POS;a=v;b=w`.
    pub fn parse(text: &str) -> DataResult<Self> {
        let mut parts = text.split(';');
        let pos = parts.next().unwrap_or("");
        if pos.is_empty() {
            return Err(DataError::MalformedTag {
                text: text.to_string(),
                detail: "empty part of speech".into(),
            });
        }
        let mut pairs = Vec::new();
        for part in parts {
            let (a, v) = part.split_once('=').ok_or_else(|| DataError::MalformedTag {
                text: text.to_string(),
                detail: format!("pair {part:?} lacks '='"),
            })?;
            pairs.push((a.to_string(), v.to_string()));
        }
        MorphTag::new(pos, Slot::from_pairs(pairs)?)
    }
}

impl fmt::Display for MorphTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.slot.is_empty() {
            write!(f, "{}", self.pos)
        } else {
            write!(f, "{};{}", self.pos, self.slot)
        }
    }
}

/// A sentence with aligned forms, lemmata, and tags (one of each per token).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedSentence {
    forms: Vec<String>,
    lemmata: Vec<String>,
    tags: Vec<MorphTag>,
}

impl AnnotatedSentence {
    /// All three columns must have the same nonzero length and every form
    /// must be nonempty.
    pub fn new(
        forms: Vec<String>,
        lemmata: Vec<String>,
        tags: Vec<MorphTag>,
    ) -> DataResult<Self> {
        if forms.is_empty() {
            return Err(DataError::InvalidSentence("zero tokens".into()));
        }
        if forms.len() != lemmata.len() || forms.len() != tags.len() {
            return Err(DataError::InvalidSentence(format!(
                "column lengths differ: {} forms, {} lemmata, {} tags",
                forms.len(),
                lemmata.len(),
                tags.len()
            )));
        }
        if let Some(i) = forms.iter().position(|f| f.is_empty()) {
            return Err(DataError::InvalidSentence(format!("empty form at token {i}")));
        }
        Ok(AnnotatedSentence {
            forms,
            lemmata,
            tags,
        })
    }

    pub fn len(&self) -> usize {
        self.forms.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction guarantees at least one token
    }

    pub fn forms(&self) -> &[String] {
        &self.forms
    }

    pub fn lemmata(&self) -> &[String] {
        &self.lemmata
    }

    pub fn tags(&self) -> &[MorphTag] {
        &self.tags
    }

    /// Aligned (form, lemma, tag) triples.
    pub fn tokens(&self) -> impl Iterator<Item = (&str, &str, &MorphTag)> {
        self.forms
            .iter()
            .zip(&self.lemmata)
            .zip(&self.tags)
            .map(|((f, l), t)| (f.as_str(), l.as_str(), t))
    }
}

/// Labeled sentences plus unlabeled form sequences.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub labeled: Vec<AnnotatedSentence>,
    pub unlabeled: Vec<Vec<String>>,
}

impl Corpus {
    pub fn labeled_token_count(&self) -> usize {
        self.labeled.iter().map(|s| s.len()).sum()
    }

    pub fn unlabeled_token_count(&self) -> usize {
        self.unlabeled.iter().map(|s| s.len()).sum()
    }
}

/// One type-level entry: a (form, lemma, tag) triple.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LexEntry {
    pub form: String,
    pub lemma: String,
    pub tag: MorphTag,
}

/// Deduplicated set of (form, lemma, tag) types in canonical order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TypeLexicon {
    entries: BTreeSet<LexEntry>,
}

impl TypeLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert an entry; returns false if it was already present.
    pub fn insert(&mut self, entry: LexEntry) -> bool {
        self.entries.insert(entry)
    }

    pub fn contains(&self, entry: &LexEntry) -> bool {
        self.entries.contains(entry)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LexEntry> {
        self.entries.iter()
    }

    /// Tab-separated `form<TAB>lemma<TAB>tag` lines in sorted order, one
    /// entry per line, trailing newline.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", e.form, e.lemma, e.tag));
        }
        out
    }

    /// Parse the TSV produced by [`TypeLexicon::to_tsv`].
    pub fn from_tsv(text: &str) -> DataResult<Self> {
        let mut lex = TypeLexicon::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(DataError::InvalidArgument(format!(
                    "lexicon line {} has {} columns, want 3",
                    i + 1,
                    cols.len()
                )));
            }
            lex.insert(LexEntry {
                form: cols[0].to_string(),
                lemma: cols[1].to_string(),
                tag: MorphTag::parse(cols[2])?,
            });
        }
        Ok(lex)
    }
}

/// The tag inventory observed in labeled data: whole tags, parts of speech,
/// and attribute–value pairs, each in canonical order.
#[derive(Debug, Clone, Default)]
pub struct TagInventory {
    pub tags: BTreeSet<MorphTag>,
    pub pos: BTreeSet<String>,
    pub pairs: BTreeSet<(String, String)>,
}

impl TagInventory {
    pub fn observe(&mut self, tag: &MorphTag) {
        self.tags.insert(tag.clone());
        self.pos.insert(tag.pos.clone());
        for (a, v) in tag.slot.pairs() {
            self.pairs.insert((a.to_string(), v.to_string()));
        }
    }
}
