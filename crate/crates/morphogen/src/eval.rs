//! Type-level evaluation of an inflector against a lexicon.
//!
//! Every (form, lemma, tag) type in the lexicon is decoded once from its
//! (lemma, tag) side and scored by exact string match against the form.
//! The report carries the overall accuracy, a per-POS breakdown, an
//! optional seen/unseen breakdown against a reference lexicon of training
//! types, and the fingerprint of the configuration that produced the
//! model, so a report can always be traced back to its run.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::{LexEntry, TypeLexicon};
use crate::inflector::{DecodeMode, Inflector};
use crate::{ModelError, ModelResult};

/// Correct/total counts over some slice of the evaluation set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Subset {
    pub correct: usize,
    pub total: usize,
}

impl Subset {
    fn hit(&mut self, correct: bool) {
        self.total += 1;
        if correct {
            self.correct += 1;
        }
    }

    /// Exact-match accuracy; zero on an empty slice.
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// One evaluated type: the gold entry, what the model decoded, and
/// whether they matched exactly.
#[derive(Debug, Clone)]
pub struct DecodeRecord {
    pub entry: LexEntry,
    pub decoded: String,
    pub correct: bool,
}

/// Result of evaluating one model over one lexicon.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub total: Subset,
    /// Keyed by POS, in sorted order.
    pub per_pos: BTreeMap<String, Subset>,
    /// Types whose (form, lemma, tag) triple appears in the reference
    /// lexicon; present only when a reference was given.
    pub seen: Option<Subset>,
    /// Types absent from the reference lexicon; present only when a
    /// reference was given.
    pub unseen: Option<Subset>,
    /// Fingerprint of the configuration that produced the model.
    pub fingerprint: String,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        self.total.accuracy()
    }

    /// Deterministic text rendering: one tab-separated line per row, rows
    /// in fixed order, POS rows sorted. Identical evaluations render
    /// byte-identically.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "fingerprint\t{}", self.fingerprint);
        let _ = writeln!(
            out,
            "total\t{}\t{}\t{}",
            self.total.correct,
            self.total.total,
            self.total.accuracy()
        );
        for (pos, s) in &self.per_pos {
            let _ = writeln!(out, "pos\t{pos}\t{}\t{}\t{}", s.correct, s.total, s.accuracy());
        }
        if let (Some(seen), Some(unseen)) = (&self.seen, &self.unseen) {
            let _ = writeln!(
                out,
                "seen\t{}\t{}\t{}",
                seen.correct,
                seen.total,
                seen.accuracy()
            );
            let _ = writeln!(
                out,
                "unseen\t{}\t{}\t{}",
                unseen.correct,
                unseen.total,
                unseen.accuracy()
            );
        }
        out
    }
}

/// Render decode records as a tab-separated table with a header, one row
/// per evaluated type. The report's counts are recomputable from this
/// dump alone.
pub fn records_tsv(records: &[DecodeRecord]) -> String {
    let mut out = String::from("form\tlemma\ttag\tdecoded\tcorrect\n");
    for r in records {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.entry.form, r.entry.lemma, r.entry.tag, r.decoded, r.correct
        );
    }
    out
}

/// Decode every type of `lexicon` and score exact matches.
///
/// Entries are visited in the lexicon's sorted order, so records and
/// report are deterministic. When `reference` is given, each type also
/// lands in the seen or unseen slice depending on whether the reference
/// contains the identical triple. An empty lexicon is rejected.
pub fn evaluate_type_accuracy(
    inflector: &Inflector,
    lexicon: &TypeLexicon,
    mode: DecodeMode,
    reference: Option<&TypeLexicon>,
    fingerprint: &str,
) -> ModelResult<(EvalReport, Vec<DecodeRecord>)> {
    if lexicon.len() == 0 {
        return Err(ModelError::Config("evaluation lexicon is empty".into()));
    }
    let mut total = Subset::default();
    let mut per_pos: BTreeMap<String, Subset> = BTreeMap::new();
    let mut seen = Subset::default();
    let mut unseen = Subset::default();
    let mut records = Vec::with_capacity(lexicon.len());
    for entry in lexicon.iter() {
        let decoded = inflector.decode(&entry.lemma, &entry.tag, mode).form;
        let correct = decoded == entry.form;
        total.hit(correct);
        per_pos.entry(entry.tag.pos.clone()).or_default().hit(correct);
        if let Some(reference) = reference {
            if reference.contains(entry) {
                seen.hit(correct);
            } else {
                unseen.hit(correct);
            }
        }
        records.push(DecodeRecord {
            entry: entry.clone(),
            decoded,
            correct,
        });
    }
    let report = EvalReport {
        total,
        per_pos,
        seen: reference.map(|_| seen),
        unseen: reference.map(|_| unseen),
        fingerprint: fingerprint.to_string(),
    };
    Ok((report, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::MorphTag;
    use crate::inflector::InflectorHyper;
    use crate::num::{derive_rng, CellKind};

    fn entry(form: &str, lemma: &str, tag: &str) -> LexEntry {
        LexEntry {
            form: form.to_string(),
            lemma: lemma.to_string(),
            tag: MorphTag::parse(tag).unwrap(),
        }
    }

    fn tiny_hyper() -> InflectorHyper {
        InflectorHyper {
            embed: 14,
            enc_hidden: 10,
            dec_hidden: 10,
            cell: CellKind::Gru,
            epochs: 350,
            dropout: 0.0,
            rho: 0.95,
            eps: 1e-6,
            beam: 3,
        }
    }

    /// Inflector overfit on three types, evaluated on a lexicon holding
    /// those three plus one unreachable type (its form uses characters
    /// outside the model's alphabet).
    fn fixture() -> (Inflector, TypeLexicon) {
        let train: Vec<(LexEntry, f64)> = vec![
            (entry("talked", "talk", "v;tns=pst"), 1.0),
            (entry("walked", "walk", "v;tns=pst"), 1.0),
            (entry("dogs", "dog", "n;num=pl"), 1.0),
        ];
        let mut rng = derive_rng(7, "eval/fixture");
        let mut model = Inflector::new(&train, tiny_hyper(), &mut rng).unwrap();
        let mut rng = derive_rng(7, "eval/fixture-train");
        model.train(&train, &mut rng).unwrap();
        let mut lexicon = TypeLexicon::new();
        for (e, _) in &train {
            lexicon.insert(e.clone());
        }
        lexicon.insert(entry("zzzq", "zzzq", "n"));
        (model, lexicon)
    }

    #[test]
    fn counts_match_the_records_exactly() {
        let (model, lexicon) = fixture();
        let (report, records) =
            evaluate_type_accuracy(&model, &lexicon, DecodeMode::Beam(3), None, "fp").unwrap();
        assert_eq!(report.total.total, 4);
        assert_eq!(records.len(), 4);
        let recomputed = records.iter().filter(|r| r.correct).count();
        assert_eq!(report.total.correct, recomputed);
        let pos_total: usize = report.per_pos.values().map(|s| s.total).sum();
        let pos_correct: usize = report.per_pos.values().map(|s| s.correct).sum();
        assert_eq!(pos_total, report.total.total);
        assert_eq!(pos_correct, report.total.correct);
        assert_eq!(report.accuracy(), report.total.correct as f64 / 4.0);
    }

    #[test]
    fn overfit_model_scores_its_own_types_and_misses_the_alien_one() {
        let (model, lexicon) = fixture();
        let (report, records) =
            evaluate_type_accuracy(&model, &lexicon, DecodeMode::Beam(3), None, "fp").unwrap();
        // The three training types decode exactly; the alien form cannot
        // be produced because its characters are outside the alphabet.
        assert_eq!(report.total.correct, 3);
        let alien = records.iter().find(|r| r.entry.form == "zzzq").unwrap();
        assert!(!alien.correct);
    }

    #[test]
    fn reference_lexicon_splits_seen_from_unseen() {
        let (model, lexicon) = fixture();
        let mut reference = TypeLexicon::new();
        reference.insert(entry("talked", "talk", "v;tns=pst"));
        reference.insert(entry("dogs", "dog", "n;num=pl"));
        let (report, _) = evaluate_type_accuracy(
            &model,
            &lexicon,
            DecodeMode::Beam(3),
            Some(&reference),
            "fp",
        )
        .unwrap();
        let seen = report.seen.unwrap();
        let unseen = report.unseen.unwrap();
        assert_eq!(seen.total, 2);
        assert_eq!(unseen.total, 2);
        assert_eq!(seen.total + unseen.total, report.total.total);
        assert_eq!(seen.correct, 2, "both reference types were trained on");
        assert_eq!(unseen.correct, 1, "walked generalizes, the alien type cannot");
        // Without a reference the breakdown is absent.
        let (bare, _) =
            evaluate_type_accuracy(&model, &lexicon, DecodeMode::Beam(3), None, "fp").unwrap();
        assert!(bare.seen.is_none() && bare.unseen.is_none());
    }

    #[test]
    fn report_text_is_deterministic_and_carries_the_fingerprint() {
        let (model, lexicon) = fixture();
        let run = || {
            evaluate_type_accuracy(&model, &lexicon, DecodeMode::Beam(3), None, "abc123")
                .unwrap()
        };
        let (a, records_a) = run();
        let (b, records_b) = run();
        assert_eq!(a.to_text(), b.to_text());
        assert_eq!(records_tsv(&records_a), records_tsv(&records_b));
        assert!(a.to_text().starts_with("fingerprint\tabc123\n"));
        let tsv = records_tsv(&records_a);
        assert!(tsv.starts_with("form\tlemma\ttag\tdecoded\tcorrect\n"));
        assert_eq!(tsv.lines().count(), 1 + a.total.total);
    }

    #[test]
    fn empty_lexicon_is_rejected() {
        let (model, _) = fixture();
        let empty = TypeLexicon::new();
        assert!(matches!(
            evaluate_type_accuracy(&model, &empty, DecodeMode::Greedy, None, "fp"),
            Err(ModelError::Config(_))
        ));
    }
}
