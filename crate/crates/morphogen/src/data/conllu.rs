use super::types::{AnnotatedSentence, MorphTag, Slot};
use super::{DataError, DataResult};

/// Parse CoNLL-U text into annotated sentences.
///
/// Uses columns 2 (form), 3 (lemma), 4 (UPOS), and 6 (FEATS). Comment lines
/// start with `#`; sentences are separated by blank lines. Multiword range
/// lines (ID containing `-`) and empty nodes (ID containing `.`) are
/// skipped. FEATS `_` means an empty slot; otherwise `A=V|B=W` pairs are
/// read with attribute names lowercased and values kept verbatim. A line
/// with the wrong column count is an error naming the 1-based line number.
pub fn parse_conllu(text: &str) -> DataResult<Vec<AnnotatedSentence>> {
    let mut sentences = Vec::new();
    let mut forms = Vec::new();
    let mut lemmata = Vec::new();
    let mut tags = Vec::new();

    let flush = |forms: &mut Vec<String>,
                     lemmata: &mut Vec<String>,
                     tags: &mut Vec<MorphTag>,
                     line: usize|
     -> DataResult<Option<AnnotatedSentence>> {
        if forms.is_empty() {
            return Ok(None);
        }
        AnnotatedSentence::new(
            std::mem::take(forms),
            std::mem::take(lemmata),
            std::mem::take(tags),
        )
        .map(Some)
        .map_err(|e| DataError::Conllu {
            line,
            detail: e.to_string(),
        })
    };

    let mut last_line = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let trimmed = raw.trim_end_matches('\r');
        if trimmed.is_empty() {
            if let Some(s) = flush(&mut forms, &mut lemmata, &mut tags, line)? {
                sentences.push(s);
            }
            continue;
        }
        if trimmed.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = trimmed.split('\t').collect();
        if cols.len() != 10 {
            return Err(DataError::Conllu {
                line,
                detail: format!("expected 10 tab-separated columns, got {}", cols.len()),
            });
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            // Multiword range or empty node: no surface token of its own.
            continue;
        }
        let feats = cols[5];
        let slot = if feats == "_" || feats.is_empty() {
            Slot::empty()
        } else {
            let pairs: DataResult<Vec<(String, String)>> = feats
                .split('|')
                .map(|pair| {
                    pair.split_once('=')
                        .map(|(a, v)| (a.to_string(), v.to_string()))
                        .ok_or_else(|| DataError::Conllu {
                            line,
                            detail: format!("FEATS pair {pair:?} lacks '='"),
                        })
                })
                .collect();
            Slot::from_pairs(pairs?).map_err(|e| DataError::Conllu {
                line,
                detail: e.to_string(),
            })?
        };
        let tag = MorphTag::new(cols[3], slot).map_err(|e| DataError::Conllu {
            line,
            detail: e.to_string(),
        })?;
        forms.push(cols[1].to_string());
        lemmata.push(cols[2].to_string());
        tags.push(tag);
    }
    if let Some(s) = flush(&mut forms, &mut lemmata, &mut tags, last_line + 1)? {
        sentences.push(s);
    }
    Ok(sentences)
}

/// Write sentences back out as CoNLL-U. Only the columns this crate models
/// carry content; the rest are `_`. FEATS pairs appear in canonical sorted
/// order, so parse → serialize → parse is a fixed point.
pub fn serialize_conllu(sentences: &[AnnotatedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        for (i, (form, lemma, tag)) in s.tokens().enumerate() {
            let feats = if tag.slot.is_empty() {
                "_".to_string()
            } else {
                tag.slot
                    .pairs()
                    .map(|(a, v)| format!("{a}={v}"))
                    .collect::<Vec<_>>()
                    .join("|")
            };
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t_\t{}\t_\t_\t_\t_\n",
                i + 1,
                form,
                lemma,
                tag.pos,
                feats
            ));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "\
# sent_id = 1
# text = Den Wörtern
1\tDen\tder\tDET\t_\tCase=Dat|Number=Plur\t2\tdet\t_\t_
2\tWörtern\tWort\tNOUN\t_\tCase=Dat|Number=Plur\t0\troot\t_\t_

# an mwt range plus an empty node below
1-2\tzum\t_\t_\t_\t_\t_\t_\t_\t_
1\tzu\tzu\tADP\t_\t_\t2\tcase\t_\t_
2\tdem\tder\tDET\t_\tCase=Dat\t3\tdet\t_\t_
2.1\tghost\tghost\tNOUN\t_\t_\t_\t_\t_\t_
3\tHaus\tHaus\tNOUN\t_\tCase=Dat|Number=Sing\t0\troot\t_\t_
";

    #[test]
    fn parses_forms_lemmata_and_tags() {
        let sents = parse_conllu(FIXTURE).unwrap();
        assert_eq!(sents.len(), 2);
        assert_eq!(sents[0].forms(), &["Den".to_string(), "Wörtern".to_string()]);
        assert_eq!(sents[0].lemmata(), &["der".to_string(), "Wort".to_string()]);
        assert_eq!(sents[0].tags()[1].to_string(), "NOUN;case=Dat;number=Plur");
    }

    #[test]
    fn skips_multiword_ranges_and_empty_nodes() {
        let sents = parse_conllu(FIXTURE).unwrap();
        assert_eq!(
            sents[1].forms(),
            &["zu".to_string(), "dem".to_string(), "Haus".to_string()]
        );
    }

    #[test]
    fn underscore_feats_is_empty_slot() {
        let sents = parse_conllu(FIXTURE).unwrap();
        assert!(sents[1].tags()[0].slot.is_empty());
    }

    #[test]
    fn empty_input_yields_no_sentences() {
        assert!(parse_conllu("").unwrap().is_empty());
        assert!(parse_conllu("\n\n").unwrap().is_empty());
        assert!(parse_conllu("# only a comment\n").unwrap().is_empty());
    }

    #[test]
    fn wrong_column_count_names_the_line() {
        let bad = "1\tonly\tfour\tcols\n";
        match parse_conllu(bad) {
            Err(DataError::Conllu { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected a parse error, got {other:?}"),
        }
        let bad2 = "1\ta\ta\tX\t_\t_\t_\t_\t_\t_\n2\tb\tb\n";
        match parse_conllu(bad2) {
            Err(DataError::Conllu { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_feats_is_an_error() {
        let bad = "1\ta\ta\tX\t_\tCase\t_\t_\t_\t_\n";
        assert!(parse_conllu(bad).is_err());
    }

    #[test]
    fn missing_trailing_blank_line_still_flushes() {
        let text = "1\ta\ta\tX\t_\t_\t_\t_\t_\t_";
        assert_eq!(parse_conllu(text).unwrap().len(), 1);
    }

    #[test]
    fn parse_serialize_parse_is_a_fixed_point() {
        let first = parse_conllu(FIXTURE).unwrap();
        let rendered = serialize_conllu(&first);
        let second = parse_conllu(&rendered).unwrap();
        assert_eq!(first, second);
        // And serialization itself is stable from there on.
        assert_eq!(rendered, serialize_conllu(&second));
    }
}
