//! Semi-supervised alternation between the generative factors and the
//! inference network.
//!
//! The generative story factorizes a sentence as tag sequence → lemma per
//! tag (conditioned on its POS) → form per (lemma, tag) pair; the
//! inference network is a chain CRF that proposes (lemmata, tags) given
//! forms. Training alternates two phases. The *sleep* phase trains a fresh
//! CRF on the labeled sentences at weight one plus sentences dreamt from
//! the current generative model at a reduced weight, so the CRF learns to
//! invert the generative story even on inputs it has never seen labeled.
//! The *wake* phase imputes annotations for the unlabeled text with the
//! current CRF and trains fresh generative factors on the labeled
//! sentences at weight one plus the imputations at a reduced weight. The
//! first sleep phase has no generative model to dream from and trains on
//! the labeled sentences alone.
//!
//! Every phase retrains its model from scratch — parameters are freshly
//! initialized from generators derived from (seed, phase label), never
//! warm-started — so any phase can be reproduced in isolation and runs
//! with the same seed and configuration match byte for byte.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand_chacha::ChaCha20Rng;

use crate::crf::{CrfHyper, CrfModel, CrfTrainReport};
use crate::data::{AnnotatedSentence, Corpus, LexEntry, MorphTag, TagInventory};
use crate::inflector::{Inflector, InflectorHyper, InflectorTrainReport};
use crate::lemmagen::{LemmaGen, LemmaGenHyper, LemmaGenTrainReport};
use crate::num::derive_rng;
use crate::taglm::{TagLm, TagLmHyper, TagLmTrainReport};
use crate::{ModelError, ModelResult};

/// How many times a sampling loop retries before declaring the model
/// degenerate.
const SAMPLE_RETRIES: usize = 10;

/// Configuration of the semi-supervised training loop.
#[derive(Debug, Clone)]
pub struct WakeSleepConfig {
    /// Number of sleep–wake rounds (at least 1).
    pub iterations: usize,
    /// Dreamt sentences per sleep phase; `None` picks a quarter of the
    /// labeled sentence count, rounded up.
    pub dream_count: Option<usize>,
    /// Weight of each dreamt sentence in the sleep phase.
    pub gamma_sleep: f64,
    /// Weight of each imputed sentence in the wake phase.
    pub gamma_wake: f64,
    /// Sampling temperature for lemmata inside dreams (sharpens the lemma
    /// distribution below 1).
    pub dream_temperature: f64,
    /// Cap on tags per dreamt sentence.
    pub max_dream_tags: usize,
    /// Cap on characters per dreamt lemma. Dreamt forms are capped by the
    /// inflector at the lemma length plus a fixed allowance.
    pub max_dream_lemma: usize,
    pub taglm: TagLmHyper,
    pub lemmagen: LemmaGenHyper,
    pub inflector: InflectorHyper,
    pub crf: CrfHyper,
    /// Master seed; every phase derives its own generators from this and
    /// the phase label.
    pub seed: u64,
}

impl Default for WakeSleepConfig {
    fn default() -> Self {
        WakeSleepConfig {
            iterations: 2,
            dream_count: None,
            gamma_sleep: 0.25,
            gamma_wake: 0.25,
            dream_temperature: 0.75,
            max_dream_tags: 30,
            max_dream_lemma: 40,
            taglm: TagLmHyper::default(),
            lemmagen: LemmaGenHyper::default(),
            inflector: InflectorHyper::default(),
            crf: CrfHyper::default(),
            seed: 0,
        }
    }
}

impl WakeSleepConfig {
    /// Check the loop-level settings (each model checks its own
    /// hyperparameters when it trains).
    pub fn validate(&self) -> ModelResult<()> {
        if self.iterations == 0 {
            return Err(ModelError::Config("iterations must be at least 1".into()));
        }
        for (name, g) in [("gamma_sleep", self.gamma_sleep), ("gamma_wake", self.gamma_wake)] {
            if !(g.is_finite() && g >= 0.0) {
                return Err(ModelError::Config(format!(
                    "{name} = {g} must be finite and nonnegative"
                )));
            }
        }
        if !(self.dream_temperature.is_finite() && self.dream_temperature > 0.0) {
            return Err(ModelError::Config(format!(
                "dream_temperature = {} must be finite and positive",
                self.dream_temperature
            )));
        }
        if self.max_dream_tags == 0 || self.max_dream_lemma == 0 {
            return Err(ModelError::Config(
                "dream length caps must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Default dreams per sleep phase: a quarter of the labeled sentence
/// count, rounded up.
pub fn default_dream_count(labeled_sentences: usize) -> usize {
    labeled_sentences.div_ceil(4)
}

// ----- the generative bundle --------------------------------------------------

/// The three generative factors together: a tag-sequence language model, a
/// POS-conditional lemma generator, and the (lemma, tag) → form inflector.
/// All three are trained on the same data slice, so their tag inventories
/// and character alphabets agree.
#[derive(Debug, Clone)]
pub struct GenerativeModel {
    pub taglm: TagLm,
    pub lemmagen: LemmaGen,
    pub inflector: Inflector,
}

impl GenerativeModel {
    /// Dream one sentence from the generative story: sample a tag
    /// sequence, then a lemma per tag conditioned on its POS, then a form
    /// per (lemma, tag) pair, so forms, lemmata, and tags always have
    /// equal length.
    ///
    /// Guards: an empty tag sequence (immediate end-of-sequence) is
    /// redrawn a bounded number of times; a token whose sampled form comes
    /// out empty falls back to its lemma, and if the lemma is empty too
    /// the token is redrawn. Exhausting either retry budget reports the
    /// model as degenerate.
    pub fn joint_sample(
        &self,
        temperature: f64,
        max_tags: usize,
        max_lemma: usize,
        rng: &mut ChaCha20Rng,
    ) -> ModelResult<AnnotatedSentence> {
        let mut tags = Vec::new();
        for attempt in 0.. {
            tags = self.taglm.sample(rng, max_tags).tags;
            if !tags.is_empty() {
                break;
            }
            if attempt + 1 == SAMPLE_RETRIES {
                return Err(ModelError::Degenerate(format!(
                    "tag model sampled the empty sequence {SAMPLE_RETRIES} times in a row"
                )));
            }
        }
        let mut lemmata = Vec::with_capacity(tags.len());
        let mut forms = Vec::with_capacity(tags.len());
        for tag in &tags {
            let mut placed = false;
            for _ in 0..SAMPLE_RETRIES {
                let lemma = self.lemmagen.sample(&tag.pos, temperature, max_lemma, rng).lemma;
                let mut form = self.inflector.sample(&lemma, tag, rng).form;
                if form.is_empty() {
                    form = lemma.clone();
                }
                if !form.is_empty() {
                    lemmata.push(lemma);
                    forms.push(form);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(ModelError::Degenerate(format!(
                    "sampled an empty form from an empty lemma {SAMPLE_RETRIES} times in a row"
                )));
            }
        }
        Ok(AnnotatedSentence::new(forms, lemmata, tags)?)
    }

    /// Joint log-probability of a fully annotated sentence under the three
    /// factors: tag-sequence probability plus per-token lemma and form
    /// probabilities. `None` when a tag lies outside the tag model's
    /// inventory.
    pub fn joint_logprob(&self, sentence: &AnnotatedSentence) -> Option<f64> {
        let mut total = self.taglm.logprob(sentence.tags())?;
        for (form, lemma, tag) in sentence.tokens() {
            total += self.lemmagen.logprob(lemma, &tag.pos);
            total += self.inflector.logprob(form, lemma, tag);
        }
        Some(total)
    }

    /// Log-probability of the forms given aligned lemmata and tags: the
    /// inflector factor alone.
    pub fn form_logprob(&self, sentence: &AnnotatedSentence) -> f64 {
        sentence
            .tokens()
            .map(|(form, lemma, tag)| self.inflector.logprob(form, lemma, tag))
            .sum()
    }

    /// Save all three factors into `dir` (created if missing). The files
    /// carry distinct names, so one directory holds the whole bundle.
    pub fn save(&self, dir: &Path) -> ModelResult<()> {
        std::fs::create_dir_all(dir)?;
        self.taglm.save(dir)?;
        self.lemmagen.save(dir)?;
        self.inflector.save(dir)?;
        Ok(())
    }

    /// Load a bundle saved by [`GenerativeModel::save`]. Training-only
    /// hyperparameters come from the arguments; dimensions come from the
    /// sidecars.
    pub fn load(
        dir: &Path,
        taglm: TagLmHyper,
        lemmagen: LemmaGenHyper,
        inflector: InflectorHyper,
    ) -> ModelResult<Self> {
        Ok(GenerativeModel {
            taglm: TagLm::load(dir, taglm)?,
            lemmagen: LemmaGen::load(dir, lemmagen)?,
            inflector: Inflector::load(dir, inflector)?,
        })
    }
}

// ----- fitting the factors ----------------------------------------------------

/// Reports from training the three generative factors.
#[derive(Debug, Clone)]
pub struct GenerativeTrainReport {
    pub taglm: TagLmTrainReport,
    pub lemmagen: LemmaGenTrainReport,
    pub inflector: InflectorTrainReport,
}

impl GenerativeTrainReport {
    /// Sum of the three factors' final training losses (mean per-step
    /// cross-entropies; lower is better). A single progress number for
    /// logging.
    pub fn combined_loss(&self) -> f64 {
        self.taglm.final_train_loss
            + self.lemmagen.final_train_loss
            + self.inflector.final_train_loss
    }
}

/// Train the three generative factors from scratch on weighted sentences.
///
/// Each factor sees its own slice of the data: the tag model sees tag
/// sequences, the lemma model sees (lemma, POS) pairs per token, and the
/// inflector sees (form, lemma, tag) triples per token, each item carrying
/// its sentence's weight. Zero-weight sentences are dropped up front and
/// duplicate items are merged with their weights summed, so training cost
/// scales with the number of distinct items rather than corpus size.
///
/// All parameters are freshly initialized from generators derived from
/// (`config.seed`, `label`), so two calls with the same data, seed, and
/// label produce byte-identical models regardless of what else ran in the
/// process.
pub fn train_generative(
    data: &[(AnnotatedSentence, f64)],
    config: &WakeSleepConfig,
    label: &str,
) -> ModelResult<(GenerativeModel, GenerativeTrainReport)> {
    for (_, w) in data {
        if !(w.is_finite() && *w >= 0.0) {
            return Err(ModelError::Config(format!(
                "sentence weight {w} must be finite and nonnegative"
            )));
        }
    }
    let mut tag_seqs: BTreeMap<Vec<MorphTag>, f64> = BTreeMap::new();
    let mut pairs: BTreeMap<(String, String), f64> = BTreeMap::new();
    let mut triples: BTreeMap<LexEntry, f64> = BTreeMap::new();
    let mut inventory = TagInventory::default();
    for (s, w) in data {
        if *w == 0.0 {
            continue;
        }
        *tag_seqs.entry(s.tags().to_vec()).or_insert(0.0) += w;
        for (form, lemma, tag) in s.tokens() {
            inventory.observe(tag);
            *pairs
                .entry((lemma.to_string(), tag.pos.clone()))
                .or_insert(0.0) += w;
            *triples
                .entry(LexEntry {
                    form: form.to_string(),
                    lemma: lemma.to_string(),
                    tag: tag.clone(),
                })
                .or_insert(0.0) += w;
        }
    }
    if tag_seqs.is_empty() {
        return Err(ModelError::Config(
            "generative training needs at least one nonzero-weight sentence".into(),
        ));
    }
    let tag_data: Vec<(Vec<MorphTag>, f64)> = tag_seqs.into_iter().collect();
    let pair_data: Vec<(String, String, f64)> = pairs
        .into_iter()
        .map(|((lemma, pos), w)| (lemma, pos, w))
        .collect();
    let triple_data: Vec<(LexEntry, f64)> = triples.into_iter().collect();

    let mut rng = derive_rng(config.seed, &format!("{label}/taglm/init"));
    let mut taglm = TagLm::new(&inventory, config.taglm.clone(), &mut rng)?;
    let mut rng = derive_rng(config.seed, &format!("{label}/taglm/train"));
    let taglm_report = taglm.train(&tag_data, &mut rng)?;

    let mut rng = derive_rng(config.seed, &format!("{label}/lemmagen/init"));
    let mut lemmagen = LemmaGen::new(&pair_data, config.lemmagen.clone(), &mut rng)?;
    let mut rng = derive_rng(config.seed, &format!("{label}/lemmagen/train"));
    let lemmagen_report = lemmagen.train(&pair_data, &mut rng)?;

    let mut rng = derive_rng(config.seed, &format!("{label}/inflector/init"));
    let mut inflector = Inflector::new(&triple_data, config.inflector.clone(), &mut rng)?;
    let mut rng = derive_rng(config.seed, &format!("{label}/inflector/train"));
    let inflector_report = inflector.train(&triple_data, &mut rng)?;

    Ok((
        GenerativeModel {
            taglm,
            lemmagen,
            inflector,
        },
        GenerativeTrainReport {
            taglm: taglm_report,
            lemmagen: lemmagen_report,
            inflector: inflector_report,
        },
    ))
}

/// Supervised baseline: train the generative factors on the labeled
/// sentences alone. This reproduces, byte for byte, the wake phase of a
/// single-round loop whose imputations carry zero weight at the same
/// seed, because that phase drops the zero-weight imputations before any
/// generator is consumed and uses the same phase label.
pub fn train_supervised(
    labeled: &[AnnotatedSentence],
    config: &WakeSleepConfig,
) -> ModelResult<(GenerativeModel, GenerativeTrainReport)> {
    let data: Vec<(AnnotatedSentence, f64)> =
        labeled.iter().cloned().map(|s| (s, 1.0)).collect();
    train_generative(&data, config, "iter1/wake")
}

// ----- phases -----------------------------------------------------------------

/// Weighted training set for a sleep phase: labeled sentences at weight
/// one plus dreamt sentences at `gamma_sleep`.
pub fn sleep_mix(
    labeled: &[AnnotatedSentence],
    dreams: &[AnnotatedSentence],
    gamma_sleep: f64,
) -> Vec<(AnnotatedSentence, f64)> {
    labeled
        .iter()
        .cloned()
        .map(|s| (s, 1.0))
        .chain(dreams.iter().cloned().map(|s| (s, gamma_sleep)))
        .collect()
}

/// Weighted training set for a wake phase: labeled sentences at weight
/// one plus imputed sentences at `gamma_wake`.
pub fn wake_mix(
    labeled: &[AnnotatedSentence],
    imputed: &[AnnotatedSentence],
    gamma_wake: f64,
) -> Vec<(AnnotatedSentence, f64)> {
    labeled
        .iter()
        .cloned()
        .map(|s| (s, 1.0))
        .chain(imputed.iter().cloned().map(|s| (s, gamma_wake)))
        .collect()
}

/// Dream `count` sentences from the generative model. Each dream uses its
/// own generator derived from (`config.seed`, `label`, index), so dreams
/// are independent of evaluation order.
pub fn dream(
    p: &GenerativeModel,
    count: usize,
    config: &WakeSleepConfig,
    label: &str,
) -> ModelResult<Vec<AnnotatedSentence>> {
    (0..count)
        .map(|k| {
            let mut rng = derive_rng(config.seed, &format!("{label}/dream/{k}"));
            p.joint_sample(
                config.dream_temperature,
                config.max_dream_tags,
                config.max_dream_lemma,
                &mut rng,
            )
        })
        .collect()
}

/// Draw one annotation per unlabeled sentence from the inference
/// network's exact posterior. Each sentence uses its own generator derived
/// from (`seed`, `label`, sentence index), so imputations are independent
/// of evaluation order.
pub fn impute(
    q: &CrfModel,
    unlabeled: &[Vec<String>],
    seed: u64,
    label: &str,
) -> ModelResult<Vec<AnnotatedSentence>> {
    let mut out = Vec::with_capacity(unlabeled.len());
    for (j, forms) in unlabeled.iter().enumerate() {
        if forms.is_empty() {
            return Err(ModelError::Config(format!("unlabeled sentence {j} is empty")));
        }
        let mut rng = derive_rng(seed, &format!("{label}/impute/{j}"));
        let (lemmata, tags) = q.sample(forms, &mut rng)?;
        out.push(AnnotatedSentence::new(forms.clone(), lemmata, tags)?);
    }
    Ok(out)
}

/// Report from one sleep phase.
#[derive(Debug, Clone)]
pub struct SleepPhaseReport {
    /// Dreamt sentences mixed into the training set.
    pub dreams: usize,
    pub train: CrfTrainReport,
}

/// Sleep phase: train a fresh inference network on the labeled sentences
/// at weight one plus dreamt sentences at `gamma_sleep`. The reported
/// log-likelihood term equals the summed sentence conditional
/// log-likelihoods of the labeled data plus `gamma_sleep` times those of
/// the dreams, both at the final weights.
pub fn sleep_phase(
    labeled: &[AnnotatedSentence],
    dreams: &[AnnotatedSentence],
    gamma_sleep: f64,
    hyper: &CrfHyper,
) -> ModelResult<(CrfModel, SleepPhaseReport)> {
    let data = sleep_mix(labeled, dreams, gamma_sleep);
    let (q, train) = CrfModel::train(&data, hyper)?;
    Ok((
        q,
        SleepPhaseReport {
            dreams: dreams.len(),
            train,
        },
    ))
}

/// Report from one wake phase.
#[derive(Debug, Clone)]
pub struct WakePhaseReport {
    /// Imputed sentences: always exactly one per unlabeled sentence.
    pub imputed: usize,
    pub train: GenerativeTrainReport,
}

/// Wake phase: impute annotations for the unlabeled text with the current
/// inference network, then train fresh generative factors on the labeled
/// sentences at weight one plus the imputations at `gamma_wake`.
pub fn wake_phase(
    labeled: &[AnnotatedSentence],
    unlabeled: &[Vec<String>],
    q: &CrfModel,
    config: &WakeSleepConfig,
    label: &str,
) -> ModelResult<(GenerativeModel, WakePhaseReport)> {
    let imputed = impute(q, unlabeled, config.seed, label)?;
    let data = wake_mix(labeled, &imputed, config.gamma_wake);
    let (p, train) = train_generative(&data, config, label)?;
    Ok((
        p,
        WakePhaseReport {
            imputed: imputed.len(),
            train,
        },
    ))
}

// ----- the driver -------------------------------------------------------------

/// Which half of a round a log record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Sleep,
    Wake,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Sleep => "sleep",
            Phase::Wake => "wake",
        })
    }
}

/// One line of the run log.
#[derive(Debug, Clone)]
pub struct PhaseRecord {
    /// Round number, starting at 1.
    pub iteration: usize,
    pub phase: Phase,
    /// Final training objective of the phase: the CRF objective for sleep
    /// (higher is better), the combined factor loss for wake (lower is
    /// better).
    pub objective: f64,
    /// Dreamt sentences (sleep) or imputed sentences (wake).
    pub samples: usize,
    /// Wall-clock duration. Informational only: excluded from the
    /// deterministic part of the record, since identical runs may take
    /// different times.
    pub wall_ms: u128,
}

impl PhaseRecord {
    /// The reproducible part of the record — everything but wall time.
    /// Two runs with the same seed and configuration produce identical
    /// sequences of these strings.
    pub fn deterministic(&self) -> String {
        format!(
            "iter={} phase={} objective={} samples={}",
            self.iteration, self.phase, self.objective, self.samples
        )
    }
}

impl fmt::Display for PhaseRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} wall_ms={}", self.deterministic(), self.wall_ms)
    }
}

/// Result of a full training run: the final inference network, the final
/// generative bundle, and one log record per completed phase.
#[derive(Debug)]
pub struct WakeSleepRun {
    pub q: CrfModel,
    pub p: GenerativeModel,
    pub log: Vec<PhaseRecord>,
}

/// Alternate sleep and wake phases for `config.iterations` rounds over a
/// corpus of labeled sentences and unlabeled form sequences.
///
/// Round 1 has no generative model yet, so its sleep phase trains on the
/// labeled sentences alone (no dreams, dream weight zero); later rounds
/// dream `dream_count` sentences from the previous round's generative
/// model. When `checkpoint_dir` is given, each phase's model is saved
/// under `iter{round}/sleep` or `iter{round}/wake` as soon as the phase
/// completes, and its log record is appended to `run.log` there — so a
/// run that fails midway leaves every completed phase and its log line on
/// disk while the error propagates.
pub fn run_wake_sleep(
    corpus: &Corpus,
    config: &WakeSleepConfig,
    checkpoint_dir: Option<&Path>,
) -> ModelResult<WakeSleepRun> {
    config.validate()?;
    if corpus.labeled.is_empty() {
        return Err(ModelError::Config(
            "the training loop needs at least one labeled sentence".into(),
        ));
    }
    let k = config
        .dream_count
        .unwrap_or_else(|| default_dream_count(corpus.labeled.len()));
    let mut log: Vec<PhaseRecord> = Vec::new();
    let mut p: Option<GenerativeModel> = None;
    let mut q: Option<CrfModel> = None;
    for i in 1..=config.iterations {
        let started = Instant::now();
        let (dreams, gamma) = match &p {
            None => (Vec::new(), 0.0),
            Some(model) => (
                dream(model, k, config, &format!("iter{i}"))?,
                config.gamma_sleep,
            ),
        };
        let (q_i, sleep) = sleep_phase(&corpus.labeled, &dreams, gamma, &config.crf)?;
        let record = PhaseRecord {
            iteration: i,
            phase: Phase::Sleep,
            objective: sleep.train.final_objective,
            samples: sleep.dreams,
            wall_ms: started.elapsed().as_millis(),
        };
        if let Some(dir) = checkpoint_dir {
            let d = dir.join(format!("iter{i}")).join("sleep");
            std::fs::create_dir_all(&d)?;
            q_i.save(&d)?;
            append_log_line(dir, &record)?;
        }
        log.push(record);
        q = Some(q_i);

        let started = Instant::now();
        let (p_i, wake) = wake_phase(
            &corpus.labeled,
            &corpus.unlabeled,
            q.as_ref().expect("sleep phase just set q"),
            config,
            &format!("iter{i}/wake"),
        )?;
        let record = PhaseRecord {
            iteration: i,
            phase: Phase::Wake,
            objective: wake.train.combined_loss(),
            samples: wake.imputed,
            wall_ms: started.elapsed().as_millis(),
        };
        if let Some(dir) = checkpoint_dir {
            let d = dir.join(format!("iter{i}")).join("wake");
            p_i.save(&d)?;
            append_log_line(dir, &record)?;
        }
        log.push(record);
        p = Some(p_i);
    }
    Ok(WakeSleepRun {
        q: q.expect("at least one round ran"),
        p: p.expect("at least one round ran"),
        log,
    })
}

fn append_log_line(dir: &Path, record: &PhaseRecord) -> ModelResult<()> {
    std::fs::create_dir_all(dir)?;
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join("run.log"))?;
    writeln!(f, "{record}")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crf::JointLabel;
    use crate::num::{logsumexp, write_params, CellKind, ParamStore};

    fn tag(s: &str) -> MorphTag {
        MorphTag::parse(s).unwrap()
    }

    fn sentence(tokens: &[(&str, &str, &str)]) -> AnnotatedSentence {
        AnnotatedSentence::new(
            tokens.iter().map(|(f, _, _)| f.to_string()).collect(),
            tokens.iter().map(|(_, l, _)| l.to_string()).collect(),
            tokens.iter().map(|(_, _, t)| tag(t)).collect(),
        )
        .unwrap()
    }

    fn toy_labeled() -> Vec<AnnotatedSentence> {
        vec![
            sentence(&[("dogs", "dog", "n;num=pl"), ("ran", "run", "v;tns=pst")]),
            sentence(&[("cats", "cat", "n;num=pl"), ("walking", "walk", "v;tns=prs")]),
            sentence(&[("dog", "dog", "n;num=sg"), ("talked", "talk", "v;tns=pst")]),
        ]
    }

    fn toy_unlabeled() -> Vec<Vec<String>> {
        vec![
            vec!["cats".to_string(), "talked".to_string()],
            vec!["walking".to_string()],
        ]
    }

    /// Hyperparameters small enough that whole runs finish in seconds.
    fn tiny_config(seed: u64) -> WakeSleepConfig {
        WakeSleepConfig {
            iterations: 1,
            taglm: TagLmHyper {
                embed: 10,
                hidden: 10,
                layers: 1,
                epochs: 30,
                lr: 1.0,
                dropout: 0.0,
                clip: 1.0,
                max_sample_len: 30,
            },
            lemmagen: LemmaGenHyper {
                char_embed: 5,
                pos_embed: 4,
                hidden: 12,
                epochs: 60,
                lr: 1.0,
                weight_decay: 1e-6,
                clip: 1.0,
                temperature: 0.75,
                max_sample_len: 40,
                unk_pos_rate: 0.0,
            },
            inflector: InflectorHyper {
                embed: 10,
                enc_hidden: 8,
                dec_hidden: 8,
                cell: CellKind::Gru,
                epochs: 30,
                dropout: 0.0,
                rho: 0.95,
                eps: 1e-6,
                beam: 3,
            },
            crf: CrfHyper {
                step: 0.1,
                steps: 40,
                l2: 1.0,
            },
            seed,
            ..WakeSleepConfig::default()
        }
    }

    fn store_bytes(store: &ParamStore) -> Vec<u8> {
        let mut b = Vec::new();
        write_params(store, &mut b).unwrap();
        b
    }

    fn bundle_bytes(m: &GenerativeModel) -> [Vec<u8>; 3] {
        [
            store_bytes(m.taglm.store()),
            store_bytes(m.lemmagen.store()),
            store_bytes(m.inflector.store()),
        ]
    }

    #[test]
    fn defaults_match_the_documented_loop() {
        let c = WakeSleepConfig::default();
        assert_eq!(c.iterations, 2);
        assert_eq!(c.dream_count, None);
        assert_eq!(c.gamma_sleep, 0.25);
        assert_eq!(c.gamma_wake, 0.25);
        assert_eq!(c.dream_temperature, 0.75);
        assert_eq!(c.max_dream_tags, 30);
        assert_eq!(c.max_dream_lemma, 40);
        assert_eq!(default_dream_count(8), 2);
        assert_eq!(default_dream_count(9), 3);
        assert_eq!(default_dream_count(1), 1);
    }

    #[test]
    fn config_validation_rejects_bad_settings() {
        let mut c = tiny_config(0);
        c.iterations = 0;
        assert!(c.validate().is_err());
        let mut c = tiny_config(0);
        c.gamma_sleep = -0.1;
        assert!(c.validate().is_err());
        let mut c = tiny_config(0);
        c.gamma_wake = f64::NAN;
        assert!(c.validate().is_err());
        let mut c = tiny_config(0);
        c.dream_temperature = 0.0;
        assert!(c.validate().is_err());
        let mut c = tiny_config(0);
        c.max_dream_tags = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn joint_samples_align_forms_lemmata_and_tags() {
        let config = tiny_config(11);
        let (p, _) = train_supervised(&toy_labeled(), &config).unwrap();
        let mut rng = derive_rng(11, "test/joint");
        for _ in 0..20 {
            let s = p.joint_sample(0.75, 30, 40, &mut rng).unwrap();
            assert!(s.len() >= 1);
            assert_eq!(s.forms().len(), s.lemmata().len());
            assert_eq!(s.forms().len(), s.tags().len());
            assert!(s.forms().iter().all(|f| !f.is_empty()));
        }
    }

    #[test]
    fn dream_length_caps_bound_every_piece() {
        let config = tiny_config(12);
        let (p, _) = train_supervised(&toy_labeled(), &config).unwrap();
        let mut rng = derive_rng(12, "test/caps");
        for _ in 0..30 {
            let s = p.joint_sample(0.75, 2, 3, &mut rng).unwrap();
            assert!(s.len() <= 2);
            for (form, lemma, _) in s.tokens() {
                let lemma_len = lemma.chars().count();
                assert!(lemma_len <= 3);
                assert!(form.chars().count() <= lemma_len + 30);
            }
        }
    }

    #[test]
    fn overfit_model_dreams_its_training_sentence() {
        // One training sentence, enough epochs to make every factor nearly
        // deterministic: the dream should reproduce it almost always.
        let data = vec![sentence(&[("dogs", "dog", "n;num=pl"), ("ran", "run", "v;tns=pst")])];
        let mut config = tiny_config(21);
        config.taglm.epochs = 200;
        config.lemmagen.epochs = 500;
        config.inflector.epochs = 250;
        let (p, _) = train_supervised(&data, &config).unwrap();
        let mut rng = derive_rng(21, "test/overfit-dream");
        let mut hits = 0;
        for _ in 0..100 {
            let s = p.joint_sample(0.75, 30, 40, &mut rng).unwrap();
            if s.forms() == data[0].forms()
                && s.lemmata() == data[0].lemmata()
                && s.tags() == data[0].tags()
            {
                hits += 1;
            }
        }
        assert!(hits >= 90, "only {hits}/100 dreams reproduced the sentence");
    }

    #[test]
    fn degenerate_tag_model_is_reported_after_bounded_retries() {
        let config = tiny_config(31);
        let (mut p, _) = train_supervised(&toy_labeled(), &config).unwrap();
        // Force immediate end-of-sequence: the tag model then only ever
        // samples empty sequences and the guard must trip.
        let eos = p.taglm.eos_class();
        let out_b = p.taglm.store().lookup("out.b").unwrap();
        p.taglm.store_mut().value_mut(out_b).data_mut()[eos] = 60.0;
        let mut rng = derive_rng(31, "test/degenerate");
        match p.joint_sample(0.75, 30, 40, &mut rng) {
            Err(ModelError::Degenerate(_)) => {}
            other => panic!("expected a degenerate-model error, got {other:?}"),
        }
    }

    #[test]
    fn sleep_with_zero_dream_weight_matches_supervised_crf() {
        let labeled = toy_labeled();
        let dreams = vec![sentence(&[("pigs", "pig", "n;num=pl")])];
        let hyper = CrfHyper {
            steps: 40,
            ..CrfHyper::default()
        };
        let (q_zero, _) = sleep_phase(&labeled, &dreams, 0.0, &hyper).unwrap();
        let data: Vec<(AnnotatedSentence, f64)> =
            labeled.iter().cloned().map(|s| (s, 1.0)).collect();
        let (q_plain, _) = CrfModel::train(&data, &hyper).unwrap();
        let forms: Vec<String> = vec!["dogs".into(), "ran".into()];
        assert_eq!(q_zero.logz(&forms).unwrap(), q_plain.logz(&forms).unwrap());
        let m = q_zero.map_decode(&forms).unwrap();
        assert_eq!(m.lemmata, q_plain.map_decode(&forms).unwrap().lemmata);
    }

    #[test]
    fn sleep_objective_decomposes_into_labeled_and_dream_likelihoods() {
        let labeled = toy_labeled();
        let dreams = vec![
            sentence(&[("pigs", "pig", "n;num=pl"), ("ran", "run", "v;tns=pst")]),
            sentence(&[("talked", "talk", "v;tns=pst")]),
        ];
        let gamma = 0.25;
        let hyper = CrfHyper {
            steps: 30,
            ..CrfHyper::default()
        };
        let (q, report) = sleep_phase(&labeled, &dreams, gamma, &hyper).unwrap();
        let mut expected = 0.0;
        for s in &labeled {
            expected += q.sentence_loglik(s).unwrap();
        }
        for s in &dreams {
            expected += gamma * q.sentence_loglik(s).unwrap();
        }
        assert!(
            (report.train.final_loglik - expected).abs() < 1e-9,
            "reported {} recomputed {}",
            report.train.final_loglik,
            expected
        );
    }

    #[test]
    fn imputation_yields_one_annotation_per_sentence_order_independently() {
        let labeled = toy_labeled();
        let (q, _) = sleep_phase(&labeled, &[], 0.0, &CrfHyper::default()).unwrap();
        let unlabeled = toy_unlabeled();
        let all = impute(&q, &unlabeled, 7, "iter1/wake").unwrap();
        assert_eq!(all.len(), unlabeled.len());
        for (forms, s) in unlabeled.iter().zip(&all) {
            assert_eq!(s.forms(), &forms[..]);
        }
        // Each sentence draws from its own generator, so imputing a prefix
        // of the list reproduces the shared entries exactly.
        let prefix = impute(&q, &unlabeled[..1], 7, "iter1/wake").unwrap();
        assert_eq!(prefix[0].lemmata(), all[0].lemmata());
        assert_eq!(prefix[0].tags(), all[0].tags());
    }

    #[test]
    fn imputation_rejects_an_empty_unlabeled_sentence() {
        let labeled = toy_labeled();
        let (q, _) = sleep_phase(&labeled, &[], 0.0, &CrfHyper::default()).unwrap();
        let unlabeled = vec![Vec::<String>::new()];
        assert!(matches!(
            impute(&q, &unlabeled, 7, "x"),
            Err(ModelError::Config(_))
        ));
    }

    #[test]
    fn zero_imputation_weight_matches_empty_unlabeled_data() {
        let labeled = toy_labeled();
        let (q, _) = sleep_phase(&labeled, &[], 0.0, &CrfHyper::default()).unwrap();
        let mut config = tiny_config(42);
        config.gamma_wake = 0.0;
        let (p_zero, r_zero) =
            wake_phase(&labeled, &toy_unlabeled(), &q, &config, "iter1/wake").unwrap();
        let (p_empty, _) = wake_phase(&labeled, &[], &q, &config, "iter1/wake").unwrap();
        assert_eq!(r_zero.imputed, 2);
        assert_eq!(bundle_bytes(&p_zero), bundle_bytes(&p_empty));
    }

    #[test]
    fn supervised_baseline_matches_single_round_null_loop() {
        // One round, no dreams, zero imputation weight: the loop's final
        // generative bundle must equal plain supervised training byte for
        // byte at the same seed.
        let corpus = Corpus {
            labeled: toy_labeled(),
            unlabeled: toy_unlabeled(),
        };
        let mut config = tiny_config(43);
        config.iterations = 1;
        config.gamma_wake = 0.0;
        config.dream_count = Some(0);
        let run = run_wake_sleep(&corpus, &config, None).unwrap();
        let (baseline, _) = train_supervised(&corpus.labeled, &config).unwrap();
        assert_eq!(bundle_bytes(&run.p), bundle_bytes(&baseline));
    }

    #[test]
    fn oracle_imputations_at_full_weight_match_fully_labeled_training() {
        // If the inference network were a perfect oracle, the wake mix at
        // weight one would be exactly the fully labeled corpus.
        let labeled = toy_labeled();
        let hidden = vec![
            sentence(&[("pigs", "pig", "n;num=pl"), ("walking", "walk", "v;tns=prs")]),
        ];
        let mix = wake_mix(&labeled, &hidden, 1.0);
        let full: Vec<(AnnotatedSentence, f64)> = labeled
            .iter()
            .chain(hidden.iter())
            .cloned()
            .map(|s| (s, 1.0))
            .collect();
        for ((a, wa), (b, wb)) in mix.iter().zip(&full) {
            assert_eq!(a.forms(), b.forms());
            assert_eq!(a.lemmata(), b.lemmata());
            assert_eq!(a.tags(), b.tags());
            assert_eq!(wa, wb);
        }
        let config = tiny_config(44);
        let (p_mix, _) = train_generative(&mix, &config, "iter1/wake").unwrap();
        let (p_full, _) = train_generative(&full, &config, "iter1/wake").unwrap();
        assert_eq!(bundle_bytes(&p_mix), bundle_bytes(&p_full));
    }

    #[test]
    fn duplicate_sentences_merge_into_weight() {
        // Two copies at weight one equal one copy at weight two: the
        // factors train on merged distinct items.
        let s = toy_labeled();
        let twice = vec![(s[0].clone(), 1.0), (s[0].clone(), 1.0)];
        let once_heavy = vec![(s[0].clone(), 2.0)];
        let config = tiny_config(45);
        let (a, _) = train_generative(&twice, &config, "t").unwrap();
        let (b, _) = train_generative(&once_heavy, &config, "t").unwrap();
        assert_eq!(bundle_bytes(&a), bundle_bytes(&b));
    }

    #[test]
    fn first_round_sleeps_without_dreams_then_wakes_on_all_unlabeled() {
        let corpus = Corpus {
            labeled: toy_labeled(),
            unlabeled: toy_unlabeled(),
        };
        let config = tiny_config(46);
        let run = run_wake_sleep(&corpus, &config, None).unwrap();
        assert_eq!(run.log.len(), 2);
        assert_eq!(run.log[0].phase, Phase::Sleep);
        assert_eq!(run.log[0].iteration, 1);
        assert_eq!(run.log[0].samples, 0);
        assert_eq!(run.log[1].phase, Phase::Wake);
        assert_eq!(run.log[1].samples, corpus.unlabeled.len());
    }

    #[test]
    fn dreamless_second_round_retrains_the_same_inference_network() {
        // With zero dreams every sleep phase sees identical data, so the
        // second round's CRF objective matches the first exactly.
        let corpus = Corpus {
            labeled: toy_labeled(),
            unlabeled: toy_unlabeled(),
        };
        let mut config = tiny_config(47);
        config.iterations = 2;
        config.dream_count = Some(0);
        let run = run_wake_sleep(&corpus, &config, None).unwrap();
        assert_eq!(run.log.len(), 4);
        assert_eq!(run.log[2].phase, Phase::Sleep);
        assert_eq!(run.log[2].objective, run.log[0].objective);
        assert_eq!(run.log[2].samples, 0);
    }

    #[test]
    fn two_round_run_dreams_the_default_count_and_is_deterministic() {
        let corpus = Corpus {
            labeled: toy_labeled(),
            unlabeled: toy_unlabeled(),
        };
        let mut config = tiny_config(48);
        config.iterations = 2;
        let run_a = run_wake_sleep(&corpus, &config, None).unwrap();
        // Round 2 dreams ceil(3/4) = 1 sentence.
        assert_eq!(run_a.log[2].samples, 1);
        let run_b = run_wake_sleep(&corpus, &config, None).unwrap();
        let lines_a: Vec<String> = run_a.log.iter().map(|r| r.deterministic()).collect();
        let lines_b: Vec<String> = run_b.log.iter().map(|r| r.deterministic()).collect();
        assert_eq!(lines_a, lines_b);
        assert_eq!(bundle_bytes(&run_a.p), bundle_bytes(&run_b.p));
    }

    #[test]
    fn checkpoints_and_log_file_appear_after_every_phase() {
        let corpus = Corpus {
            labeled: toy_labeled(),
            unlabeled: toy_unlabeled(),
        };
        let config = tiny_config(49);
        let dir = tempfile::tempdir().unwrap();
        let run = run_wake_sleep(&corpus, &config, Some(dir.path())).unwrap();
        assert!(dir.path().join("iter1/sleep/crf.model").is_file());
        assert!(dir.path().join("iter1/wake/taglm.params").is_file());
        assert!(dir.path().join("iter1/wake/lemmagen.params").is_file());
        assert!(dir.path().join("iter1/wake/inflector.params").is_file());
        let log = std::fs::read_to_string(dir.path().join("run.log")).unwrap();
        let lines: Vec<&str> = log.lines().collect();
        assert_eq!(lines.len(), run.log.len());
        for (line, record) in lines.iter().zip(&run.log) {
            assert!(line.starts_with(&record.deterministic()));
        }
        // The checkpointed bundle reloads into the same parameters.
        let reloaded = GenerativeModel::load(
            &dir.path().join("iter1/wake"),
            config.taglm.clone(),
            config.lemmagen.clone(),
            config.inflector.clone(),
        )
        .unwrap();
        assert_eq!(bundle_bytes(&run.p), bundle_bytes(&reloaded));
    }

    #[test]
    fn run_rejects_an_empty_labeled_corpus() {
        let corpus = Corpus {
            labeled: Vec::new(),
            unlabeled: toy_unlabeled(),
        };
        assert!(matches!(
            run_wake_sleep(&corpus, &tiny_config(50), None),
            Err(ModelError::Config(_))
        ));
    }

    #[test]
    fn reconstruction_mass_sums_identically_along_two_routes() {
        // For one fixture sentence, sum p(forms | lemmata, tags) ·
        // q(lemmata, tags | forms) over every label path the inference
        // network can propose. Route A uses the model's own chain
        // quantities (featurized path scores against the dynamic-program
        // partition, whole-token form log-probabilities). Route B
        // renormalizes the same path scores by explicit enumeration and
        // rebuilds each form probability from per-step log-probabilities.
        let labeled = toy_labeled();
        let (q, _) = sleep_phase(&labeled, &[], 0.0, &CrfHyper { steps: 30, ..CrfHyper::default() })
            .unwrap();
        let config = tiny_config(51);
        let (p, _) = train_supervised(&labeled, &config).unwrap();

        let forms: Vec<String> = vec!["dogs".into(), "ran".into()];
        let posterior = q.posterior(&forms).unwrap();
        // Enumerate all candidate label paths.
        let mut paths: Vec<Vec<usize>> = vec![Vec::new()];
        for i in 0..forms.len() {
            let mut next = Vec::new();
            for path in &paths {
                for &c in posterior.candidates(i) {
                    let mut ext = path.clone();
                    ext.push(c);
                    next.push(ext);
                }
            }
            paths = next;
        }
        let score_path = |path: &[usize]| -> f64 {
            let mut score = 0.0;
            let mut prev: Option<&MorphTag> = None;
            for (i, &c) in path.iter().enumerate() {
                let label: &JointLabel = q.label(c);
                for name in crate::crf::featurize(&forms, i, label, prev) {
                    score += q.feature_weight(&name);
                }
                prev = Some(&q.label(c).tag);
            }
            score
        };
        let realize = |path: &[usize]| -> Vec<(String, MorphTag)> {
            path.iter()
                .enumerate()
                .map(|(i, &c)| {
                    let label = q.label(c);
                    (label.tree.apply(&forms[i]).unwrap(), label.tag.clone())
                })
                .collect()
        };

        // Route A: q from the chain partition, p from whole-token scoring.
        let mut route_a = 0.0;
        for path in &paths {
            let q_prob = (score_path(path) - posterior.logz()).exp();
            let mut p_log = 0.0;
            for (i, (lemma, t)) in realize(path).iter().enumerate() {
                p_log += p.inflector.logprob(&forms[i], lemma, t);
            }
            route_a += q_prob * p_log.exp();
        }

        // Route B: q renormalized over the enumerated paths, p rebuilt from
        // per-step log-probabilities.
        let scores: Vec<f64> = paths.iter().map(|path| score_path(path)).collect();
        let norm = logsumexp(&scores);
        let mut route_b = 0.0;
        for (path, score) in paths.iter().zip(&scores) {
            let q_prob = (score - norm).exp();
            let mut p_prob = 1.0;
            for (i, (lemma, t)) in realize(path).iter().enumerate() {
                for step in p.inflector.step_logprobs(&forms[i], lemma, t) {
                    p_prob *= step.exp();
                }
            }
            route_b += q_prob * p_prob;
        }

        assert!(route_a > 0.0);
        assert!(
            (route_a - route_b).abs() < 1e-8,
            "route A {route_a} route B {route_b}"
        );
    }

    #[test]
    fn joint_logprob_adds_the_three_factor_scores() {
        let config = tiny_config(52);
        let labeled = toy_labeled();
        let (p, _) = train_supervised(&labeled, &config).unwrap();
        let s = &labeled[0];
        let total = p.joint_logprob(s).unwrap();
        let mut expected = p.taglm.logprob(s.tags()).unwrap();
        for (form, lemma, t) in s.tokens() {
            expected += p.lemmagen.logprob(lemma, &t.pos);
            expected += p.inflector.logprob(form, lemma, t);
        }
        assert_eq!(total, expected);
        assert_eq!(p.form_logprob(s), s.tokens().map(|(f, l, t)| p.inflector.logprob(f, l, t)).sum::<f64>());
        // A tag outside the inventory is unscorable.
        let alien = sentence(&[("zzz", "zzz", "x")]);
        assert!(p.joint_logprob(&alien).is_none());
    }
}
