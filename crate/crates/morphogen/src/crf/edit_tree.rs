//! Edit trees: deterministic recursive transformations from an inflected
//! form to its lemma.
//!
//! A tree is extracted from a (form, lemma) pair by finding their longest
//! common substring, keeping it verbatim, and recursing on the prefix pair
//! and the suffix pair; spans with no common substring become literal
//! replacement leaves. Applying a tree to a different form succeeds only
//! when that form satisfies the same match constraints (long enough for
//! the kept span, literal spans equal), so a tree doubles as a reusable
//! lemmatization rule: the tree extracted from ("talking", "talk") strips
//! "-ing" from any form ending in it and is inapplicable elsewhere.

use std::fmt;

/// A recursive form-to-lemma edit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EditTree {
    /// Keep the span between a `pre_len`-character prefix and a
    /// `suf_len`-character suffix (the extracted common substring, at least
    /// one character), editing the two sides recursively.
    Match {
        pre_len: usize,
        suf_len: usize,
        left: Box<EditTree>,
        right: Box<EditTree>,
    },
    /// Replace exactly the literal `from` with `to`.
    Replace { from: String, to: String },
}

impl EditTree {
    /// The tree that maps every nonempty form to itself.
    pub fn identity() -> EditTree {
        EditTree::Match {
            pre_len: 0,
            suf_len: 0,
            left: Box::new(EditTree::Replace {
                from: String::new(),
                to: String::new(),
            }),
            right: Box::new(EditTree::Replace {
                from: String::new(),
                to: String::new(),
            }),
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == EditTree::identity()
    }

    /// Extract the edit tree turning `form` into `lemma`. Deterministic:
    /// substring ties prefer the leftmost start in the form, then in the
    /// lemma. Extracting from equal nonempty strings yields the identity
    /// tree; `apply` on the source form always returns the lemma.
    pub fn extract(form: &str, lemma: &str) -> EditTree {
        let f: Vec<char> = form.chars().collect();
        let l: Vec<char> = lemma.chars().collect();
        extract_rec(&f, &l)
    }

    /// Apply the tree to a form; None when the form fails the tree's match
    /// constraints.
    pub fn apply(&self, form: &str) -> Option<String> {
        let chars: Vec<char> = form.chars().collect();
        apply_span(self, &chars)
    }

    /// Parse the serialization produced by [`fmt::Display`].
    pub fn parse(s: &str) -> Option<EditTree> {
        let chars: Vec<char> = s.chars().collect();
        let (tree, used) = parse_tree(&chars, 0)?;
        if used == chars.len() {
            Some(tree)
        } else {
            None
        }
    }
}

/// Longest common substring of two char slices as (form start, lemma
/// start, length); ties prefer smaller form start, then smaller lemma
/// start. None when nothing is shared.
fn longest_common_substring(f: &[char], l: &[char]) -> Option<(usize, usize, usize)> {
    if f.is_empty() || l.is_empty() {
        return None;
    }
    // lengths[j] = length of the common suffix of f[..i] and l[..j].
    let mut lengths = vec![0usize; l.len() + 1];
    let mut best: Option<(usize, usize, usize)> = None;
    for i in 1..=f.len() {
        let mut prev_diag = 0;
        for j in 1..=l.len() {
            let cur = lengths[j];
            lengths[j] = if f[i - 1] == l[j - 1] { prev_diag + 1 } else { 0 };
            prev_diag = cur;
            let k = lengths[j];
            if k == 0 {
                continue;
            }
            let cand = (i - k, j - k, k);
            let better = match best {
                None => true,
                Some((bf, bl, bk)) => {
                    k > bk || (k == bk && (cand.0 < bf || (cand.0 == bf && cand.1 < bl)))
                }
            };
            if better {
                best = Some(cand);
            }
        }
    }
    best
}

fn extract_rec(f: &[char], l: &[char]) -> EditTree {
    match longest_common_substring(f, l) {
        None => EditTree::Replace {
            from: f.iter().collect(),
            to: l.iter().collect(),
        },
        Some((fi, li, k)) => EditTree::Match {
            pre_len: fi,
            suf_len: f.len() - fi - k,
            left: Box::new(extract_rec(&f[..fi], &l[..li])),
            right: Box::new(extract_rec(&f[fi + k..], &l[li + k..])),
        },
    }
}

fn apply_span(tree: &EditTree, span: &[char]) -> Option<String> {
    match tree {
        EditTree::Replace { from, to } => {
            if span.iter().copied().eq(from.chars()) {
                Some(to.clone())
            } else {
                None
            }
        }
        EditTree::Match {
            pre_len,
            suf_len,
            left,
            right,
        } => {
            // The kept span was a nonempty common substring, so the form
            // must be strictly longer than the two edited sides combined.
            if span.len() < pre_len + suf_len + 1 {
                return None;
            }
            let mid: String = span[*pre_len..span.len() - suf_len].iter().collect();
            let l = apply_span(left, &span[..*pre_len])?;
            let r = apply_span(right, &span[span.len() - suf_len..])?;
            Some(format!("{l}{mid}{r}"))
        }
    }
}

/// Escape a literal for the serialization: percent-encode the UTF-8 bytes
/// of `%`, the syntax characters, whitespace, and control characters.
/// Shared with the chain model file writer, which needs whitespace-free
/// feature names.
pub(crate) fn escape_text(s: &str) -> String {
    escape(s)
}

pub(crate) fn unescape_text(s: &str) -> Option<String> {
    unescape(s)
}

fn escape(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c == '%' || c == '(' || c == ')' || c == ',' || c.is_whitespace() || c.is_control() {
            let mut buf = [0u8; 4];
            for b in c.encode_utf8(&mut buf).bytes() {
                out.push_str(&format!("%{b:02X}"));
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn unescape(s: &str) -> Option<String> {
    let mut bytes = Vec::new();
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '%' {
            let hi = chars.next()?;
            let lo = chars.next()?;
            let hex: String = [hi, lo].iter().collect();
            bytes.push(u8::from_str_radix(&hex, 16).ok()?);
        } else {
            let mut buf = [0u8; 4];
            bytes.extend(c.encode_utf8(&mut buf).bytes());
        }
    }
    String::from_utf8(bytes).ok()
}

impl fmt::Display for EditTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EditTree::Match {
                pre_len,
                suf_len,
                left,
                right,
            } => write!(f, "M({pre_len},{suf_len},{left},{right})"),
            EditTree::Replace { from, to } => {
                write!(f, "R({},{})", escape(from), escape(to))
            }
        }
    }
}

/// Recursive-descent parser over chars; returns the tree and the index
/// just past it.
fn parse_tree(s: &[char], at: usize) -> Option<(EditTree, usize)> {
    match s.get(at)? {
        'M' => {
            let at = expect(s, at + 1, '(')?;
            let (pre_len, at) = parse_usize(s, at)?;
            let at = expect(s, at, ',')?;
            let (suf_len, at) = parse_usize(s, at)?;
            let at = expect(s, at, ',')?;
            let (left, at) = parse_tree(s, at)?;
            let at = expect(s, at, ',')?;
            let (right, at) = parse_tree(s, at)?;
            let at = expect(s, at, ')')?;
            Some((
                EditTree::Match {
                    pre_len,
                    suf_len,
                    left: Box::new(left),
                    right: Box::new(right),
                },
                at,
            ))
        }
        'R' => {
            let at = expect(s, at + 1, '(')?;
            let (from, at) = parse_literal(s, at)?;
            let at = expect(s, at, ',')?;
            let (to, at) = parse_literal(s, at)?;
            let at = expect(s, at, ')')?;
            Some((EditTree::Replace { from, to }, at))
        }
        _ => None,
    }
}

fn expect(s: &[char], at: usize, c: char) -> Option<usize> {
    (*s.get(at)? == c).then_some(at + 1)
}

fn parse_usize(s: &[char], at: usize) -> Option<(usize, usize)> {
    let mut end = at;
    while s.get(end).is_some_and(|c| c.is_ascii_digit()) {
        end += 1;
    }
    if end == at {
        return None;
    }
    let text: String = s[at..end].iter().collect();
    Some((text.parse().ok()?, end))
}

fn parse_literal(s: &[char], at: usize) -> Option<(String, usize)> {
    let mut end = at;
    while s.get(end).is_some_and(|&c| c != ',' && c != ')') {
        end += 1;
    }
    let text: String = s[at..end].iter().collect();
    Some((unescape(&text)?, end))
}
