//! Deterministic synthetic suffixing language for controlled experiments.
//!
//! The language has a fixed inventory of thirty consonant–vowel lemmata
//! and six tags, each tag realized by its own suffix (one of them empty);
//! a form is always the lemma with its tag's suffix appended. Tag
//! sequences come from a fixed first-order grammar with a per-step stop
//! probability, and lemmata are drawn from a sharply skewed distribution
//! over ranks.
//!
//! Three design choices make the language useful for probing
//! semi-supervised training. The suffix alphabet is disjoint from the
//! lemma alphabet, so tag identity is always recoverable from the form.
//! The lemma inventory splits into a common half and a rare half with
//! disjoint consonant sets, so a small labeled sample contains only
//! common-half characters while a larger unlabeled sample also contains
//! the rare half — a model trained on labeled data alone cannot even
//! output the rare characters. And the skewed rank distribution makes the
//! common half dominate any prefix of a stream.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::data::{AnnotatedSentence, Corpus, LexEntry, MorphTag, TypeLexicon};
use crate::num::derive_rng;
use crate::taglm::sample_index;

/// The fixed lemma inventory, in rank order: fifteen common lemmata over
/// consonants {p, t, k, m, n, s}, then fifteen rare lemmata over
/// consonants {l, r, b, d, g}. Vowels {a, i, u, o} are shared.
const LEMMATA: [&str; 30] = [
    "pata", "kimu", "sona", "muni", "tiso", "nupi", "kasa", "mito", "puna", "soki", "tamu",
    "nisa", "komi", "supa", "mato", "lago", "ruda", "bilo", "dagu", "gora", "ligu", "rabo",
    "dilu", "gabi", "ludo", "riga", "bodu", "galo", "dira", "bugo",
];

/// Tags in grammar order with their suffixes. The suffix alphabet
/// {w, y, z, f, h, e} never appears inside a lemma.
const TAGS: [(&str, &str); 6] = [
    ("n", ""),
    ("n;num=pl", "we"),
    ("v;tns=prs", "ye"),
    ("v;tns=pst", "ze"),
    ("v;tns=fut", "fe"),
    ("adj", "he"),
];

/// A sampled-language instance: lemma inventory, tag inventory with
/// suffixes, tag grammar, and lemma rank distribution.
#[derive(Debug, Clone)]
pub struct SynthLanguage {
    lemmata: Vec<String>,
    tags: Vec<MorphTag>,
    suffixes: Vec<String>,
    /// Initial tag distribution.
    initial: Vec<f64>,
    /// Row per previous tag, column per next tag.
    transition: Vec<Vec<f64>>,
    /// Probability of ending the sentence after each token.
    stop: f64,
    /// Hard cap on sentence length.
    max_len: usize,
    /// Lemma probabilities by rank.
    zipf: Vec<f64>,
}

impl SynthLanguage {
    /// The one standard instance. Everything about it is fixed; only the
    /// seeds passed to the sampling methods vary between experiments.
    pub fn standard() -> Self {
        let lemmata: Vec<String> = LEMMATA.iter().map(|s| s.to_string()).collect();
        let tags: Vec<MorphTag> = TAGS
            .iter()
            .map(|(t, _)| MorphTag::parse(t).expect("fixed tags parse"))
            .collect();
        let suffixes: Vec<String> = TAGS.iter().map(|(_, s)| s.to_string()).collect();
        // Nouns lead sentences; verbs and adjectives follow nouns; verbs
        // hand back to nominals. Rows sum to one.
        let initial = vec![0.35, 0.15, 0.15, 0.15, 0.05, 0.15];
        let transition = vec![
            vec![0.10, 0.10, 0.25, 0.25, 0.10, 0.20],
            vec![0.10, 0.10, 0.25, 0.25, 0.10, 0.20],
            vec![0.30, 0.20, 0.05, 0.05, 0.05, 0.35],
            vec![0.30, 0.20, 0.05, 0.05, 0.05, 0.35],
            vec![0.30, 0.20, 0.05, 0.05, 0.05, 0.35],
            vec![0.35, 0.25, 0.15, 0.15, 0.10, 0.00],
        ];
        // Rank weight 1/(rank+1)^2: the head dominates hard enough that a
        // small sample rarely reaches the rare half.
        let weights: Vec<f64> = (0..lemmata.len())
            .map(|i| 1.0 / (((i + 1) * (i + 1)) as f64))
            .collect();
        let total: f64 = weights.iter().sum();
        let zipf = weights.iter().map(|w| w / total).collect();
        SynthLanguage {
            lemmata,
            tags,
            suffixes,
            initial,
            transition,
            stop: 0.25,
            max_len: 12,
            zipf,
        }
    }

    pub fn lemmata(&self) -> &[String] {
        &self.lemmata
    }

    pub fn tags(&self) -> &[MorphTag] {
        &self.tags
    }

    /// The suffix realizing `tag`, when the tag belongs to the language.
    pub fn suffix(&self, tag: &MorphTag) -> Option<&str> {
        self.tags
            .iter()
            .position(|t| t == tag)
            .map(|i| self.suffixes[i].as_str())
    }

    /// The form of (`lemma`, `tag`): the lemma with the tag's suffix
    /// appended. `None` when the tag is not in the language.
    pub fn form(&self, lemma: &str, tag: &MorphTag) -> Option<String> {
        self.suffix(tag).map(|s| format!("{lemma}{s}"))
    }

    /// Every (form, lemma, tag) type of the language.
    pub fn all_types(&self) -> Vec<LexEntry> {
        let mut out = Vec::new();
        for lemma in &self.lemmata {
            for tag in &self.tags {
                out.push(LexEntry {
                    form: self.form(lemma, tag).expect("own tag"),
                    lemma: lemma.clone(),
                    tag: tag.clone(),
                });
            }
        }
        out
    }

    /// Draw one sentence: a tag sequence from the grammar, then a lemma
    /// per tag from the rank distribution, then deterministic forms.
    pub fn sample_sentence(&self, rng: &mut ChaCha20Rng) -> AnnotatedSentence {
        let mut tag_ids = Vec::new();
        let mut t = sample_index(&self.initial, rng);
        loop {
            tag_ids.push(t);
            if tag_ids.len() >= self.max_len || rng.random::<f64>() < self.stop {
                break;
            }
            t = sample_index(&self.transition[t], rng);
        }
        let mut forms = Vec::with_capacity(tag_ids.len());
        let mut lemmata = Vec::with_capacity(tag_ids.len());
        let mut tags = Vec::with_capacity(tag_ids.len());
        for &id in &tag_ids {
            let lemma = &self.lemmata[sample_index(&self.zipf, rng)];
            forms.push(format!("{lemma}{}", self.suffixes[id]));
            lemmata.push(lemma.clone());
            tags.push(self.tags[id].clone());
        }
        AnnotatedSentence::new(forms, lemmata, tags).expect("generated sentences are valid")
    }

    /// Generate a corpus: whole sentences are drawn until each side's
    /// token budget is met, so each side is a minimal whole-sentence cover
    /// of its budget (possibly slightly over, never under). The labeled
    /// and unlabeled sides use independent generator streams derived from
    /// `seed`, so changing one budget never disturbs the other side.
    pub fn corpus(&self, labeled_tokens: usize, unlabeled_tokens: usize, seed: u64) -> Corpus {
        let mut labeled = Vec::new();
        let mut rng = derive_rng(seed, "synth/labeled");
        let mut have = 0;
        while have < labeled_tokens {
            let s = self.sample_sentence(&mut rng);
            have += s.len();
            labeled.push(s);
        }
        let mut unlabeled = Vec::new();
        let mut rng = derive_rng(seed, "synth/unlabeled");
        let mut have = 0;
        while have < unlabeled_tokens {
            let s = self.sample_sentence(&mut rng);
            have += s.len();
            unlabeled.push(s.forms().to_vec());
        }
        Corpus { labeled, unlabeled }
    }

    /// The first `n` distinct (form, lemma, tag) types of a fresh
    /// evaluation stream, in first-seen order. The stream is independent
    /// of the corpus streams. `n` must not exceed the language's type
    /// count.
    pub fn heldout_types(&self, n: usize, seed: u64) -> Vec<LexEntry> {
        assert!(
            n <= self.lemmata.len() * self.tags.len(),
            "the language only has {} types",
            self.lemmata.len() * self.tags.len()
        );
        let mut rng = derive_rng(seed, "synth/eval");
        let mut seen = TypeLexicon::new();
        let mut out = Vec::new();
        while out.len() < n {
            let s = self.sample_sentence(&mut rng);
            for (form, lemma, tag) in s.tokens() {
                let entry = LexEntry {
                    form: form.to_string(),
                    lemma: lemma.to_string(),
                    tag: tag.clone(),
                };
                if seen.insert(entry.clone()) {
                    out.push(entry);
                    if out.len() == n {
                        break;
                    }
                }
            }
        }
        out
    }
}
