//! Conditional character-level language model over lemmata.
//!
//! A single-layer LSTM spells a lemma one character at a time, conditioned
//! on the part of speech: every step's input is the concatenation of the
//! previous character's embedding (a zero vector at the first step) and the
//! POS embedding, and every step predicts the next character or
//! end-of-sequence. Characters never seen in training map to a shared UNK
//! row and UNK output class, so any string gets a finite score; parts of
//! speech outside the training set fall back to an UNK-POS row that is
//! trained by randomly down-mapping a small fraction of training examples.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::num::{
    read_params, write_params, LstmCell, ParamId, ParamStore, RecurrentState, Tape, Tensor, Var,
};
use crate::taglm::sample_index;
use crate::{ModelError, ModelResult};

/// Hyperparameters for [`LemmaGen`].
#[derive(Debug, Clone)]
pub struct LemmaGenHyper {
    pub char_embed: usize,
    pub pos_embed: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip: f64,
    /// Default sampling temperature.
    pub temperature: f64,
    /// Cap on sampled lemma length.
    pub max_sample_len: usize,
    /// Probability of replacing an example's POS row with the UNK-POS row
    /// during training, so the fallback row gets trained.
    pub unk_pos_rate: f64,
}

impl Default for LemmaGenHyper {
    fn default() -> Self {
        LemmaGenHyper {
            char_embed: 5,
            pos_embed: 5,
            hidden: 50,
            epochs: 500,
            lr: 4.0,
            weight_decay: 1e-6,
            clip: 1.0,
            temperature: 0.75,
            max_sample_len: 40,
            unk_pos_rate: 0.001,
        }
    }
}

/// A sampled lemma plus whether the length cap cut it off.
#[derive(Debug, Clone)]
pub struct SampledLemma {
    pub lemma: String,
    pub truncated: bool,
}

/// Report returned by [`LemmaGen::train`].
#[derive(Debug, Clone)]
pub struct LemmaGenTrainReport {
    /// Weighted mean per-prediction cross-entropy over the final epoch.
    pub final_train_loss: f64,
}

/// Recurrent state plus the resolved POS row, for incremental scoring,
/// sampling, and enumeration.
#[derive(Debug, Clone)]
pub struct LemmaGenState {
    h: Tensor,
    c: Tensor,
    pos_row: usize,
}

/// The POS-conditioned lemma spelling model.
#[derive(Debug, Clone)]
pub struct LemmaGen {
    hyper: LemmaGenHyper,
    store: ParamStore,
    cell: LstmCell,
    char_embed: ParamId,
    pos_embed: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    /// Observed characters in sorted order; class/row index = position here,
    /// with UNK right after and (for output classes) EOS last.
    chars: Vec<char>,
    char_index: BTreeMap<char, usize>,
    /// Observed POS names in sorted order; UNK-POS row is last.
    pos: Vec<String>,
    pos_index: BTreeMap<String, usize>,
}

impl LemmaGen {
    /// Build an untrained model whose character and POS vocabularies are
    /// collected from the nonzero-weight entries of `data` (lemma, POS,
    /// weight). `rng` drives parameter initialization.
    pub fn new(
        data: &[(String, String, f64)],
        hyper: LemmaGenHyper,
        rng: &mut ChaCha20Rng,
    ) -> ModelResult<Self> {
        let mut char_set: BTreeSet<char> = BTreeSet::new();
        let mut pos_set: BTreeSet<String> = BTreeSet::new();
        for (lemma, pos, w) in data {
            if *w == 0.0 {
                continue;
            }
            char_set.extend(lemma.chars());
            pos_set.insert(pos.clone());
        }
        if pos_set.is_empty() {
            return Err(ModelError::Config(
                "lemma model needs at least one nonzero-weight training pair".into(),
            ));
        }
        Self::with_vocab(&char_set, &pos_set, hyper, rng)
    }

    /// Build an untrained model over explicit vocabularies.
    pub fn with_vocab(
        char_set: &BTreeSet<char>,
        pos_set: &BTreeSet<String>,
        hyper: LemmaGenHyper,
        rng: &mut ChaCha20Rng,
    ) -> ModelResult<Self> {
        if pos_set.is_empty() {
            return Err(ModelError::Config("lemma model needs at least one POS".into()));
        }
        let chars: Vec<char> = char_set.iter().copied().collect();
        let char_index = chars.iter().copied().enumerate().map(|(i, c)| (c, i)).collect();
        let pos: Vec<String> = pos_set.iter().cloned().collect();
        let pos_index = pos.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();

        let mut store = ParamStore::new();
        // Characters plus the UNK row; POS plus the UNK-POS row.
        let char_embed = store.add_matrix("chars", chars.len() + 1, hyper.char_embed, rng)?;
        let pos_embed = store.add_matrix("pos", pos.len() + 1, hyper.pos_embed, rng)?;
        let cell = LstmCell::new(
            &mut store,
            rng,
            "cell",
            hyper.char_embed + hyper.pos_embed,
            hyper.hidden,
        )?;
        // Output classes: observed chars, UNK, EOS.
        let out_w = store.add_matrix("out.w", chars.len() + 2, hyper.hidden, rng)?;
        let out_b = store.add_zero_vector("out.b", chars.len() + 2)?;
        Ok(LemmaGen {
            hyper,
            store,
            cell,
            char_embed,
            pos_embed,
            out_w,
            out_b,
            chars,
            char_index,
            pos,
            pos_index,
        })
    }

    pub fn hyper(&self) -> &LemmaGenHyper {
        &self.hyper
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Class (and input row) of a character; unseen characters map to UNK.
    pub fn char_class(&self, c: char) -> usize {
        self.char_index.get(&c).copied().unwrap_or(self.chars.len())
    }

    /// The character of an output class; None for UNK and EOS.
    pub fn class_char(&self, class: usize) -> Option<char> {
        self.chars.get(class).copied()
    }

    pub fn unk_class(&self) -> usize {
        self.chars.len()
    }

    pub fn eos_class(&self) -> usize {
        self.chars.len() + 1
    }

    /// Number of classes an input can continue with (observed chars + UNK).
    pub fn continuation_classes(&self) -> usize {
        self.chars.len() + 1
    }

    fn pos_row(&self, pos: &str) -> usize {
        self.pos_index.get(pos).copied().unwrap_or(self.pos.len())
    }

    // ----- incremental evaluation -------------------------------------------------

    /// State before the first step for a POS condition (the learned initial
    /// state; no prediction can be made until one [`LemmaGen::advance`]).
    pub fn start(&self, pos: &str) -> LemmaGenState {
        let mut tape = Tape::new(&self.store);
        let s = self.cell.initial_state(&mut tape);
        LemmaGenState {
            h: tape.value(s.h).clone(),
            c: tape.value(s.c.expect("lstm state")).clone(),
            pos_row: self.pos_row(pos),
        }
    }

    /// One LSTM step consuming the previous character class (None at the
    /// first step, which feeds a zero vector in the character slot).
    pub fn advance(&self, state: &LemmaGenState, prev: Option<usize>) -> LemmaGenState {
        let mut tape = Tape::new(&self.store);
        let char_part = match prev {
            Some(row) => {
                let m = tape.param(self.char_embed);
                tape.row_sum(m, &[row]).expect("row in range")
            }
            None => tape.input(Tensor::zeros(&[self.hyper.char_embed])),
        };
        let pos_part = {
            let m = tape.param(self.pos_embed);
            tape.row_sum(m, &[state.pos_row]).expect("row in range")
        };
        let x = tape.concat(&[char_part, pos_part]).expect("vectors");
        let h = tape.input(state.h.clone());
        let c = tape.input(state.c.clone());
        let s = RecurrentState { h, c: Some(c) };
        let s2 = self.cell.step(&mut tape, &s, x).expect("shapes fixed");
        LemmaGenState {
            h: tape.value(s2.h).clone(),
            c: tape.value(s2.c.expect("lstm state")).clone(),
            pos_row: state.pos_row,
        }
    }

    /// Log-probabilities over output classes (chars, UNK, EOS) after at
    /// least one advance.
    pub fn log_dist(&self, state: &LemmaGenState) -> Vec<f64> {
        let mut tape = Tape::new(&self.store);
        let h = tape.input(state.h.clone());
        let w = tape.param(self.out_w);
        let b = tape.param(self.out_b);
        let logits = tape.affine(w, h, b).expect("shapes fixed at construction");
        let xs = tape.value(logits).data();
        let lse = crate::num::logsumexp(xs);
        xs.iter().map(|&x| x - lse).collect()
    }

    /// Per-step log-probabilities of a lemma given a POS: one entry per
    /// character plus the final EOS step. Unseen characters score as the
    /// UNK class; unseen POS uses the UNK-POS row, so the result is always
    /// finite.
    pub fn step_logprobs(&self, lemma: &str, pos: &str) -> Vec<f64> {
        let mut out = Vec::new();
        let mut state = self.start(pos);
        let mut prev = None;
        for ch in lemma.chars() {
            state = self.advance(&state, prev);
            let class = self.char_class(ch);
            out.push(self.log_dist(&state)[class]);
            prev = Some(class);
        }
        state = self.advance(&state, prev);
        out.push(self.log_dist(&state)[self.eos_class()]);
        out
    }

    /// Total log-probability of a lemma given a POS.
    pub fn logprob(&self, lemma: &str, pos: &str) -> f64 {
        self.step_logprobs(lemma, pos).iter().sum()
    }

    /// Ancestral sampling at the given temperature (each step's
    /// log-probabilities are divided by the temperature before
    /// exponentiation). The UNK class is excluded from the sampling support
    /// — samples are always strings over the observed alphabet — and its
    /// mass is renormalized away. Temperature must be finite and positive.
    pub fn sample(
        &self,
        pos: &str,
        temperature: f64,
        max_len: usize,
        rng: &mut ChaCha20Rng,
    ) -> SampledLemma {
        assert!(
            temperature.is_finite() && temperature > 0.0,
            "temperature {temperature} must be finite and positive"
        );
        let mut lemma = String::new();
        let mut state = self.start(pos);
        let mut prev = None;
        loop {
            state = self.advance(&state, prev);
            let logd = self.log_dist(&state);
            let max = logd
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            let mut probs: Vec<f64> = logd
                .iter()
                .map(|&l| ((l - max) / temperature).exp())
                .collect();
            probs[self.unk_class()] = 0.0;
            let class = sample_index(&probs, rng);
            if class == self.eos_class() {
                return SampledLemma {
                    lemma,
                    truncated: false,
                };
            }
            lemma.push(self.chars[class]);
            if lemma.chars().count() >= max_len {
                return SampledLemma {
                    lemma,
                    truncated: true,
                };
            }
            prev = Some(class);
        }
    }

    // ----- training ---------------------------------------------------------------

    /// Loss (sum of per-step cross-entropies) of one (lemma, POS row) pair
    /// on a tape, plus the number of prediction steps.
    fn pair_loss(
        &self,
        tape: &mut Tape,
        lemma: &str,
        pos_row: usize,
    ) -> ModelResult<(Var, usize)> {
        let classes: Vec<usize> = lemma.chars().map(|c| self.char_class(c)).collect();
        let pos_part = {
            let m = tape.param(self.pos_embed);
            tape.row_sum(m, &[pos_row])?
        };
        let mut state = self.cell.initial_state(tape);
        let mut losses = Vec::with_capacity(classes.len() + 1);
        let mut prev: Option<usize> = None;
        for i in 0..=classes.len() {
            let char_part = match prev {
                Some(row) => {
                    let m = tape.param(self.char_embed);
                    tape.row_sum(m, &[row])?
                }
                None => tape.input(Tensor::zeros(&[self.hyper.char_embed])),
            };
            let x = tape.concat(&[char_part, pos_part])?;
            state = self.cell.step(tape, &state, x)?;
            let w = tape.param(self.out_w);
            let b = tape.param(self.out_b);
            let logits = tape.affine(w, state.h, b)?;
            let target = if i < classes.len() {
                classes[i]
            } else {
                self.eos_class()
            };
            losses.push(tape.cross_entropy(logits, target)?);
            if i < classes.len() {
                prev = Some(classes[i]);
            }
        }
        let total = tape.sum_scalars(&losses)?;
        Ok((total, classes.len() + 1))
    }

    /// Train with weighted (lemma, POS, weight) pairs; duplicates are
    /// meaningful (their losses add). Zero-weight pairs are dropped up
    /// front, so a zero weight is exactly equivalent to removal. One SGD
    /// step per pair per epoch with gradients clipped to `clip` global norm
    /// and L2 weight decay; a small random fraction of presentations swaps
    /// the POS row for the UNK-POS row so the fallback gets trained.
    pub fn train(
        &mut self,
        data: &[(String, String, f64)],
        rng: &mut ChaCha20Rng,
    ) -> ModelResult<LemmaGenTrainReport> {
        if !(self.hyper.lr.is_finite() && self.hyper.lr >= 0.0) {
            return Err(ModelError::Config(format!(
                "learning rate {} must be finite and nonnegative",
                self.hyper.lr
            )));
        }
        if !(0.0..1.0).contains(&self.hyper.unk_pos_rate) {
            return Err(ModelError::Config(format!(
                "UNK-POS rate {} must lie in [0, 1)",
                self.hyper.unk_pos_rate
            )));
        }
        let kept: Vec<(String, usize, f64)> = data
            .iter()
            .filter(|(_, _, w)| *w != 0.0)
            .map(|(lemma, pos, w)| (lemma.clone(), self.pos_row(pos), *w))
            .collect();
        if kept.is_empty() {
            return Err(ModelError::Config(
                "lemma model training needs at least one nonzero-weight pair".into(),
            ));
        }
        for (_, _, w) in &kept {
            if !w.is_finite() || *w < 0.0 {
                return Err(ModelError::Config(format!("invalid pair weight {w}")));
            }
        }
        let unk_pos_row = self.pos.len();
        let mut final_train_loss = 0.0;
        for _epoch in 0..self.hyper.epochs {
            let mut order: Vec<usize> = (0..kept.len()).collect();
            for i in (1..order.len()).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            let mut epoch_loss = 0.0;
            let mut epoch_steps = 0.0;
            for &idx in &order {
                let (lemma, pos_row, weight) = &kept[idx];
                let row = if rng.random_range(0.0..1.0) < self.hyper.unk_pos_rate {
                    unk_pos_row
                } else {
                    *pos_row
                };
                let mut tape = Tape::new(&self.store);
                let (loss, n) = self.pair_loss(&mut tape, lemma, row)?;
                let weighted = tape.scale(loss, *weight);
                epoch_loss += tape.value(loss).item() * weight;
                epoch_steps += *weight * n as f64;
                let grads = tape.backward(weighted)?;
                self.store.accumulate(&grads);
                // A zero learning rate is a valid null update.
                if self.hyper.lr > 0.0 {
                    self.store.sgd_step(
                        self.hyper.lr,
                        Some(self.hyper.clip),
                        self.hyper.weight_decay,
                    )?;
                } else {
                    self.store.zero_grads();
                }
            }
            final_train_loss = if epoch_steps > 0.0 {
                epoch_loss / epoch_steps
            } else {
                0.0
            };
        }
        Ok(LemmaGenTrainReport { final_train_loss })
    }

    // ----- persistence ------------------------------------------------------------

    const SIDECAR_HEADER: &'static str = "morphogen-lemmagen v1";

    /// Text sidecar: dims plus character (as U+XXXX codepoints) and POS
    /// listings in index order.
    pub fn sidecar(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{}", Self::SIDECAR_HEADER).unwrap();
        writeln!(out, "char_embed {}", self.hyper.char_embed).unwrap();
        writeln!(out, "pos_embed {}", self.hyper.pos_embed).unwrap();
        writeln!(out, "hidden {}", self.hyper.hidden).unwrap();
        writeln!(out, "max_sample_len {}", self.hyper.max_sample_len).unwrap();
        for c in &self.chars {
            writeln!(out, "char U+{:04X}", *c as u32).unwrap();
        }
        for p in &self.pos {
            writeln!(out, "pos {p}").unwrap();
        }
        out
    }

    /// Save parameters and sidecar to `dir` as `lemmagen.params` /
    /// `lemmagen.vocab`.
    pub fn save(&self, dir: &std::path::Path) -> ModelResult<()> {
        let mut f = std::fs::File::create(dir.join("lemmagen.params"))?;
        write_params(&self.store, &mut f)?;
        std::fs::write(dir.join("lemmagen.vocab"), self.sidecar())?;
        Ok(())
    }

    /// Load a model saved by [`LemmaGen::save`]. Training and sampling
    /// settings come from `hyper`; dims are taken from the sidecar.
    pub fn load(dir: &std::path::Path, mut hyper: LemmaGenHyper) -> ModelResult<Self> {
        let sidecar = std::fs::read_to_string(dir.join("lemmagen.vocab"))?;
        let mut lines = sidecar.lines();
        if lines.next() != Some(Self::SIDECAR_HEADER) {
            return Err(ModelError::MalformedModel(
                "lemma model sidecar header mismatch".into(),
            ));
        }
        let mut char_set: BTreeSet<char> = BTreeSet::new();
        let mut pos_set: BTreeSet<String> = BTreeSet::new();
        let mut dims: BTreeMap<String, usize> = BTreeMap::new();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let (kind, rest) = line.split_once(' ').ok_or_else(|| {
                ModelError::MalformedModel(format!("bad sidecar line {line:?}"))
            })?;
            match kind {
                "char_embed" | "pos_embed" | "hidden" | "max_sample_len" => {
                    let v = rest.parse().map_err(|_| {
                        ModelError::MalformedModel(format!("bad dimension in {line:?}"))
                    })?;
                    dims.insert(kind.to_string(), v);
                }
                "char" => {
                    let hex = rest.strip_prefix("U+").ok_or_else(|| {
                        ModelError::MalformedModel(format!("bad char line {line:?}"))
                    })?;
                    let code = u32::from_str_radix(hex, 16).map_err(|_| {
                        ModelError::MalformedModel(format!("bad char line {line:?}"))
                    })?;
                    let c = char::from_u32(code).ok_or_else(|| {
                        ModelError::MalformedModel(format!("bad codepoint in {line:?}"))
                    })?;
                    char_set.insert(c);
                }
                "pos" => {
                    pos_set.insert(rest.to_string());
                }
                _ => {
                    return Err(ModelError::MalformedModel(format!(
                        "unknown sidecar line {line:?}"
                    )))
                }
            }
        }
        for key in ["char_embed", "pos_embed", "hidden", "max_sample_len"] {
            if !dims.contains_key(key) {
                return Err(ModelError::MalformedModel(format!(
                    "sidecar missing dimension {key}"
                )));
            }
        }
        hyper.char_embed = dims["char_embed"];
        hyper.pos_embed = dims["pos_embed"];
        hyper.hidden = dims["hidden"];
        hyper.max_sample_len = dims["max_sample_len"];
        let mut init_rng = crate::num::derive_rng(0, "lemmagen/load");
        let mut model = LemmaGen::with_vocab(&char_set, &pos_set, hyper, &mut init_rng)?;
        let mut f = std::fs::File::open(dir.join("lemmagen.params"))?;
        let pairs = read_params(&mut f)?;
        model.store.set_values(&pairs)?;
        Ok(model)
    }
}
