//! Inflection model: p(form | lemma, tag) as an attention-based
//! encoder-decoder over characters.
//!
//! One model serves every tag of a language. The input is linearized as
//! `⟨w⟩ POS attr=val… lemma-chars ⟨/w⟩` (slot tokens in canonical sorted
//! order); a bidirectional recurrent encoder reads it, and a recurrent
//! decoder spells the inflected form character-by-character, looking at the
//! encoder through multiplicative attention: at every step the decoder
//! state is scored against each encoder position (h_enc·A·h_dec), the
//! softmax of those scores mixes the encoder states into a context vector,
//! and an attentional layer tanh(W·[context; h_dec] + b) feeds the output
//! projection. The decoder's initial state is learned; the encoder
//! influences it only through attention. Characters never seen in training
//! map to a shared UNK row and class, so any string scores finitely.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::data::{LexEntry, MorphTag};
use crate::num::{
    dropout_mask, read_params, write_params, CellKind, ParamId, ParamStore, RecurrentCell,
    RecurrentState, Tape, Tensor, Var,
};
use crate::taglm::sample_index;
use crate::{ModelError, ModelResult};

/// Hyperparameters for [`Inflector`].
#[derive(Debug, Clone)]
pub struct InflectorHyper {
    pub embed: usize,
    /// Encoder hidden size per direction.
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub cell: CellKind,
    pub epochs: usize,
    pub dropout: f64,
    /// AdaDelta decay and stabilizer.
    pub rho: f64,
    pub eps: f64,
    /// Default beam width for beam decoding.
    pub beam: usize,
}

impl Default for InflectorHyper {
    fn default() -> Self {
        InflectorHyper {
            embed: 200,
            enc_hidden: 100,
            dec_hidden: 100,
            cell: CellKind::Gru,
            epochs: 250,
            dropout: 0.5,
            rho: 0.95,
            eps: 1e-6,
            beam: 4,
        }
    }
}

/// A symbol of the linearized source sequence. Typed, so a lemma character
/// can never collide with a POS name or an attribute=value token.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SrcSym {
    /// `⟨w⟩` opening boundary.
    Open,
    /// `⟨/w⟩` closing boundary.
    Close,
    /// Shared fallback row for any symbol outside the training vocabulary.
    Unk,
    Pos(String),
    Pair(String, String),
    Char(char),
}

impl fmt::Display for SrcSym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SrcSym::Open => write!(f, "⟨w⟩"),
            SrcSym::Close => write!(f, "⟨/w⟩"),
            SrcSym::Unk => write!(f, "⟨unk⟩"),
            SrcSym::Pos(p) => write!(f, "{p}"),
            SrcSym::Pair(a, v) => write!(f, "{a}={v}"),
            SrcSym::Char(c) => write!(f, "{c}"),
        }
    }
}

/// Linearize a (lemma, tag) pair into the source symbol sequence:
/// boundary, POS, slot tokens in canonical order, lemma characters,
/// boundary. Distinct inputs always produce distinct sequences because the
/// symbols are typed and the slot order is canonical.
pub fn linearize(lemma: &str, tag: &MorphTag) -> Vec<SrcSym> {
    let mut out = Vec::with_capacity(3 + tag.slot.len() + lemma.chars().count());
    out.push(SrcSym::Open);
    out.push(SrcSym::Pos(tag.pos.clone()));
    for (a, v) in tag.slot.pairs() {
        out.push(SrcSym::Pair(a.to_string(), v.to_string()));
    }
    out.extend(lemma.chars().map(SrcSym::Char));
    out.push(SrcSym::Close);
    out
}

/// How [`Inflector::decode`] searches for an output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
}

/// A decoded form with its total log probability.
#[derive(Debug, Clone)]
pub struct DecodedForm {
    pub form: String,
    pub logprob: f64,
    /// Set when the length cap stopped the search before end-of-sequence
    /// (the score then lacks the final EOS term).
    pub truncated: bool,
}

/// A sampled form plus whether the length cap cut it off.
#[derive(Debug, Clone)]
pub struct SampledForm {
    pub form: String,
    pub truncated: bool,
}

/// Report returned by [`Inflector::train`].
#[derive(Debug, Clone)]
pub struct InflectorTrainReport {
    /// Weighted mean per-prediction cross-entropy over the final epoch.
    pub final_train_loss: f64,
}

/// Encoder states for one source sequence: one row per source position.
#[derive(Debug, Clone)]
pub struct EncodedSource {
    h: Tensor, // [n, 2 * enc_hidden]
}

/// Decoder recurrent state as plain values.
#[derive(Debug, Clone)]
pub struct DecoderState {
    h: Tensor,
    c: Option<Tensor>,
}

/// The inflection encoder-decoder.
#[derive(Debug, Clone)]
pub struct Inflector {
    hyper: InflectorHyper,
    store: ParamStore,
    enc_fw: RecurrentCell,
    enc_bw: RecurrentCell,
    dec: RecurrentCell,
    embed: ParamId,
    attn_a: ParamId, // [2*enc_hidden, dec_hidden]
    attn_w: ParamId, // [dec_hidden, 2*enc_hidden + dec_hidden]
    attn_b: ParamId, // [dec_hidden]
    out_w: ParamId,  // [chars + 2, dec_hidden]
    out_b: ParamId,
    /// Embedding rows: Open, Close, Unk, then POS, pairs, chars in order.
    syms: Vec<SrcSym>,
    sym_index: BTreeMap<SrcSym, usize>,
    /// Output classes 0..chars.len() in sorted order; then UNK, then EOS.
    chars: Vec<char>,
    char_index: BTreeMap<char, usize>,
    /// Embedding row of each output class (chars then UNK).
    char_rows: Vec<usize>,
}

impl Inflector {
    /// Build an untrained model whose vocabularies (characters from forms
    /// and lemmata, POS names, attribute=value pairs) are collected from
    /// the nonzero-weight entries of `data`.
    pub fn new(
        data: &[(LexEntry, f64)],
        hyper: InflectorHyper,
        rng: &mut ChaCha20Rng,
    ) -> ModelResult<Self> {
        let mut chars: BTreeSet<char> = BTreeSet::new();
        let mut pos: BTreeSet<String> = BTreeSet::new();
        let mut pairs: BTreeSet<(String, String)> = BTreeSet::new();
        let mut any = false;
        for (e, w) in data {
            if *w == 0.0 {
                continue;
            }
            any = true;
            chars.extend(e.form.chars());
            chars.extend(e.lemma.chars());
            pos.insert(e.tag.pos.clone());
            for (a, v) in e.tag.slot.pairs() {
                pairs.insert((a.to_string(), v.to_string()));
            }
        }
        if !any {
            return Err(ModelError::Config(
                "inflection model needs at least one nonzero-weight training triple".into(),
            ));
        }
        Self::with_vocab(&chars, &pos, &pairs, hyper, rng)
    }

    /// Build an untrained model over explicit vocabularies.
    pub fn with_vocab(
        chars: &BTreeSet<char>,
        pos: &BTreeSet<String>,
        pairs: &BTreeSet<(String, String)>,
        hyper: InflectorHyper,
        rng: &mut ChaCha20Rng,
    ) -> ModelResult<Self> {
        let mut syms = vec![SrcSym::Open, SrcSym::Close, SrcSym::Unk];
        syms.extend(pos.iter().map(|p| SrcSym::Pos(p.clone())));
        syms.extend(pairs.iter().map(|(a, v)| SrcSym::Pair(a.clone(), v.clone())));
        syms.extend(chars.iter().map(|&c| SrcSym::Char(c)));
        let sym_index: BTreeMap<SrcSym, usize> = syms
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, s)| (s, i))
            .collect();
        let chars: Vec<char> = chars.iter().copied().collect();
        let char_index: BTreeMap<char, usize> =
            chars.iter().copied().enumerate().map(|(i, c)| (c, i)).collect();
        let mut char_rows: Vec<usize> = chars
            .iter()
            .map(|&c| sym_index[&SrcSym::Char(c)])
            .collect();
        char_rows.push(sym_index[&SrcSym::Unk]);

        let mut store = ParamStore::new();
        let embed = store.add_matrix("embed", syms.len(), hyper.embed, rng)?;
        let enc_fw = RecurrentCell::new(
            hyper.cell,
            &mut store,
            rng,
            "enc_fw",
            hyper.embed,
            hyper.enc_hidden,
        )?;
        let enc_bw = RecurrentCell::new(
            hyper.cell,
            &mut store,
            rng,
            "enc_bw",
            hyper.embed,
            hyper.enc_hidden,
        )?;
        let dec = RecurrentCell::new(
            hyper.cell,
            &mut store,
            rng,
            "dec",
            hyper.embed,
            hyper.dec_hidden,
        )?;
        let attn_a = store.add_matrix("attn.a", 2 * hyper.enc_hidden, hyper.dec_hidden, rng)?;
        let attn_w = store.add_matrix(
            "attn.w",
            hyper.dec_hidden,
            2 * hyper.enc_hidden + hyper.dec_hidden,
            rng,
        )?;
        let attn_b = store.add_zero_vector("attn.b", hyper.dec_hidden)?;
        let out_w = store.add_matrix("out.w", chars.len() + 2, hyper.dec_hidden, rng)?;
        let out_b = store.add_zero_vector("out.b", chars.len() + 2)?;
        Ok(Inflector {
            hyper,
            store,
            enc_fw,
            enc_bw,
            dec,
            embed,
            attn_a,
            attn_w,
            attn_b,
            out_w,
            out_b,
            syms,
            sym_index,
            chars,
            char_index,
            char_rows,
        })
    }

    pub fn hyper(&self) -> &InflectorHyper {
        &self.hyper
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Output class (and input row index) of a character; unseen map to UNK.
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

    /// Number of classes an output can continue with (chars + UNK).
    pub fn continuation_classes(&self) -> usize {
        self.chars.len() + 1
    }

    fn sym_row(&self, s: &SrcSym) -> usize {
        self.sym_index
            .get(s)
            .copied()
            .unwrap_or(self.sym_index[&SrcSym::Unk])
    }

    // ----- shared forward pieces --------------------------------------------------

    /// Encoder forward pass on a tape: returns the stacked per-position
    /// state matrix `[n, 2 * enc_hidden]` (forward states concatenated with
    /// backward states at each position).
    fn encode_on_tape(
        &self,
        tape: &mut Tape,
        lemma: &str,
        tag: &MorphTag,
        mut drop: Option<&mut ChaCha20Rng>,
    ) -> ModelResult<Var> {
        let rows: Vec<usize> = linearize(lemma, tag)
            .iter()
            .map(|s| self.sym_row(s))
            .collect();
        let mut xs = Vec::with_capacity(rows.len());
        for &r in &rows {
            let m = tape.param(self.embed);
            let mut x = tape.row_sum(m, &[r])?;
            if let Some(rng) = drop.as_deref_mut() {
                let mask = dropout_mask(self.hyper.embed, self.hyper.dropout, rng)?;
                x = tape.mask_mul(x, mask)?;
            }
            xs.push(x);
        }
        let mut fw = Vec::with_capacity(xs.len());
        let mut state = self.enc_fw.initial_state(tape);
        for &x in &xs {
            state = self.enc_fw.step(tape, &state, x)?;
            fw.push(state.h);
        }
        let mut bw_rev = Vec::with_capacity(xs.len());
        let mut state = self.enc_bw.initial_state(tape);
        for &x in xs.iter().rev() {
            state = self.enc_bw.step(tape, &state, x)?;
            bw_rev.push(state.h);
        }
        let rows: Vec<Var> = fw
            .iter()
            .zip(bw_rev.iter().rev())
            .map(|(&f, &b)| tape.concat(&[f, b]))
            .collect::<Result<_, _>>()?;
        Ok(tape.stack(&rows)?)
    }

    /// One decoder step on a tape: consume the (already embedded, possibly
    /// dropout-masked) input `x`, attend over the encoder matrix, and
    /// return the new state, the output logits, and the attention weights.
    fn decode_step_on_tape(
        &self,
        tape: &mut Tape,
        enc_h: Var,
        state: &RecurrentState,
        x: Var,
        mut drop: Option<&mut ChaCha20Rng>,
    ) -> ModelResult<(RecurrentState, Var, Var)> {
        let s2 = self.dec.step(tape, state, x)?;
        let a = tape.param(self.attn_a);
        let ah = tape.matvec(a, s2.h)?;
        let scores = tape.matvec(enc_h, ah)?;
        let alpha = tape.softmax(scores)?;
        let context = tape.mat_t_vec(enc_h, alpha)?;
        let cat = tape.concat(&[context, s2.h])?;
        let w = tape.param(self.attn_w);
        let b = tape.param(self.attn_b);
        let pre = tape.affine(w, cat, b)?;
        let mut htilde = tape.tanh(pre);
        if let Some(rng) = drop.as_deref_mut() {
            let mask = dropout_mask(self.hyper.dec_hidden, self.hyper.dropout, rng)?;
            htilde = tape.mask_mul(htilde, mask)?;
        }
        let w = tape.param(self.out_w);
        let b = tape.param(self.out_b);
        let logits = tape.affine(w, htilde, b)?;
        Ok((s2, logits, alpha))
    }

    /// Decoder input for a previous output class (None at the first step:
    /// a zero vector in place of a character embedding).
    fn decoder_input(
        &self,
        tape: &mut Tape,
        prev: Option<usize>,
        mut drop: Option<&mut ChaCha20Rng>,
    ) -> ModelResult<Var> {
        let mut x = match prev {
            Some(class) => {
                let m = tape.param(self.embed);
                tape.row_sum(m, &[self.char_rows[class]])?
            }
            None => tape.input(Tensor::zeros(&[self.hyper.embed])),
        };
        if let Some(rng) = drop.as_deref_mut() {
            let mask = dropout_mask(self.hyper.embed, self.hyper.dropout, rng)?;
            x = tape.mask_mul(x, mask)?;
        }
        Ok(x)
    }

    /// Loss (sum of per-step cross-entropies) of one (form, lemma, tag)
    /// triple on a tape, plus the prediction step count.
    fn triple_loss(
        &self,
        tape: &mut Tape,
        entry: &LexEntry,
        mut drop: Option<&mut ChaCha20Rng>,
    ) -> ModelResult<(Var, usize)> {
        let enc_h = self.encode_on_tape(tape, &entry.lemma, &entry.tag, drop.as_deref_mut())?;
        let classes: Vec<usize> = entry.form.chars().map(|c| self.char_class(c)).collect();
        let mut state = self.dec.initial_state(tape);
        let mut prev = None;
        let mut losses = Vec::with_capacity(classes.len() + 1);
        for i in 0..=classes.len() {
            let x = self.decoder_input(tape, prev, drop.as_deref_mut())?;
            let (s2, logits, _) =
                self.decode_step_on_tape(tape, enc_h, &state, x, drop.as_deref_mut())?;
            let target = if i < classes.len() {
                classes[i]
            } else {
                self.eos_class()
            };
            losses.push(tape.cross_entropy(logits, target)?);
            state = s2;
            if i < classes.len() {
                prev = Some(classes[i]);
            }
        }
        let total = tape.sum_scalars(&losses)?;
        Ok((total, classes.len() + 1))
    }

    // ----- incremental evaluation -------------------------------------------------

    /// Run the encoder over one input (no dropout).
    pub fn encode(&self, lemma: &str, tag: &MorphTag) -> EncodedSource {
        let mut tape = Tape::new(&self.store);
        let h = self
            .encode_on_tape(&mut tape, lemma, tag, None)
            .expect("shapes fixed at construction");
        EncodedSource {
            h: tape.value(h).clone(),
        }
    }

    /// The decoder's learned initial state.
    pub fn start_state(&self) -> DecoderState {
        let mut tape = Tape::new(&self.store);
        let s = self.dec.initial_state(&mut tape);
        DecoderState {
            h: tape.value(s.h).clone(),
            c: s.c.map(|c| tape.value(c).clone()),
        }
    }

    /// One decode step (no dropout): consume the previous output class
    /// (None at the first step) and return the successor state, the
    /// log-probabilities over output classes (chars, UNK, EOS), and the
    /// attention weights over source positions.
    pub fn decode_step(
        &self,
        enc: &EncodedSource,
        state: &DecoderState,
        prev: Option<usize>,
    ) -> (DecoderState, Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new(&self.store);
        let enc_h = tape.input(enc.h.clone());
        let h = tape.input(state.h.clone());
        let c = state.c.as_ref().map(|c| tape.input(c.clone()));
        let rs = RecurrentState { h, c };
        let x = self
            .decoder_input(&mut tape, prev, None)
            .expect("shapes fixed");
        let (s2, logits, alpha) = self
            .decode_step_on_tape(&mut tape, enc_h, &rs, x, None)
            .expect("shapes fixed");
        let xs = tape.value(logits).data();
        let lse = crate::num::logsumexp(xs);
        let dist: Vec<f64> = xs.iter().map(|&v| v - lse).collect();
        let attn = tape.value(alpha).data().to_vec();
        let next = DecoderState {
            h: tape.value(s2.h).clone(),
            c: s2.c.map(|c| tape.value(c).clone()),
        };
        (next, dist, attn)
    }

    /// Per-step log-probabilities of a form: one entry per character plus
    /// the final EOS step. Always finite (unseen characters score as UNK).
    pub fn step_logprobs(&self, form: &str, lemma: &str, tag: &MorphTag) -> Vec<f64> {
        let enc = self.encode(lemma, tag);
        let mut out = Vec::new();
        let mut state = self.start_state();
        let mut prev = None;
        for ch in form.chars() {
            let (s2, dist, _) = self.decode_step(&enc, &state, prev);
            let class = self.char_class(ch);
            out.push(dist[class]);
            state = s2;
            prev = Some(class);
        }
        let (_, dist, _) = self.decode_step(&enc, &state, prev);
        out.push(dist[self.eos_class()]);
        out
    }

    /// Total log-probability of a form given (lemma, tag).
    pub fn logprob(&self, form: &str, lemma: &str, tag: &MorphTag) -> f64 {
        self.step_logprobs(form, lemma, tag).iter().sum()
    }

    /// Length cap for decoding and sampling.
    fn cap(&self, lemma: &str) -> usize {
        lemma.chars().count() + 30
    }

    /// Greedy or beam decoding. Ties break toward the lower class index;
    /// beam results never score below greedy (the greedy rollout always
    /// competes as a candidate).
    pub fn decode(&self, lemma: &str, tag: &MorphTag, mode: DecodeMode) -> DecodedForm {
        let enc = self.encode(lemma, tag);
        let cap = self.cap(lemma);
        let greedy = self.greedy_rollout(&enc, cap);
        match mode {
            DecodeMode::Greedy => self.finish(greedy),
            DecodeMode::Beam(width) => {
                let beam = self.beam_rollout(&enc, cap, width.max(1));
                // The better completed candidate wins; a completed result
                // beats a truncated one regardless of score.
                let best = match (&beam, &greedy) {
                    (b, g) if b.2 == g.2 => {
                        if b.1 >= g.1 {
                            beam
                        } else {
                            greedy
                        }
                    }
                    (b, _) if !b.2 => beam,
                    _ => greedy,
                };
                self.finish(best)
            }
        }
    }

    fn finish(&self, (classes, score, truncated): (Vec<usize>, f64, bool)) -> DecodedForm {
        let form: String = classes
            .iter()
            .map(|&c| self.class_char(c).expect("decode emits only real chars"))
            .collect();
        DecodedForm {
            form,
            logprob: score,
            truncated,
        }
    }

    /// Stepwise argmax over chars + EOS (UNK excluded, first-best wins
    /// ties). Returns (classes, score, truncated).
    fn greedy_rollout(&self, enc: &EncodedSource, cap: usize) -> (Vec<usize>, f64, bool) {
        let mut classes = Vec::new();
        let mut score = 0.0;
        let mut state = self.start_state();
        let mut prev = None;
        loop {
            let (s2, dist, _) = self.decode_step(enc, &state, prev);
            let mut best = 0;
            for class in 1..dist.len() {
                if class == self.unk_class() {
                    continue;
                }
                if dist[class] > dist[best] || best == self.unk_class() {
                    best = class;
                }
            }
            score += dist[best];
            if best == self.eos_class() {
                return (classes, score, false);
            }
            classes.push(best);
            if classes.len() >= cap {
                return (classes, score, true);
            }
            state = s2;
            prev = Some(best);
        }
    }

    /// Beam search keeping `width` best partial hypotheses by total log
    /// probability. Returns (classes, score, truncated).
    fn beam_rollout(&self, enc: &EncodedSource, cap: usize, width: usize) -> (Vec<usize>, f64, bool) {
        struct Hyp {
            state: DecoderState,
            dist: Vec<f64>,
            classes: Vec<usize>,
            score: f64,
        }
        let start = self.start_state();
        let (s1, d1, _) = self.decode_step(enc, &start, None);
        let mut live = vec![Hyp {
            state: s1,
            dist: d1,
            classes: Vec::new(),
            score: 0.0,
        }];
        let mut done: Option<(Vec<usize>, f64)> = None;
        for _ in 0..cap {
            // Rank every expansion of every live hypothesis; ties break by
            // hypothesis order then class index, both deterministic.
            let mut cands: Vec<(usize, usize, f64)> = Vec::new();
            for (i, h) in live.iter().enumerate() {
                for class in 0..h.dist.len() {
                    if class == self.unk_class() {
                        continue;
                    }
                    cands.push((i, class, h.score + h.dist[class]));
                }
            }
            cands.sort_by(|a, b| {
                b.2.partial_cmp(&a.2)
                    .expect("finite scores")
                    .then(a.0.cmp(&b.0))
                    .then(a.1.cmp(&b.1))
            });
            let mut next = Vec::new();
            for &(i, class, score) in cands.iter().take(width) {
                if class == self.eos_class() {
                    if done.as_ref().is_none_or(|(_, s)| score > *s) {
                        done = Some((live[i].classes.clone(), score));
                    }
                } else {
                    let (state, dist, _) = self.decode_step(enc, &live[i].state, Some(class));
                    let mut classes = live[i].classes.clone();
                    classes.push(class);
                    next.push(Hyp {
                        state,
                        dist,
                        classes,
                        score,
                    });
                }
            }
            // Scores only fall as hypotheses grow, so once the best
            // completed sequence beats every live prefix, it is final.
            if let Some((_, ds)) = &done {
                next.retain(|h| h.score > *ds);
            }
            if next.is_empty() {
                break;
            }
            live = next;
        }
        match done {
            Some((classes, score)) => (classes, score, false),
            None => {
                // Cap reached with nothing completed: best live prefix.
                let best = live
                    .iter()
                    .max_by(|a, b| a.score.partial_cmp(&b.score).expect("finite scores"))
                    .expect("at least one live hypothesis");
                (best.classes.clone(), best.score, true)
            }
        }
    }

    /// Ancestral sampling of a form (UNK excluded from the support and
    /// renormalized away; capped at lemma length + 30).
    pub fn sample(&self, lemma: &str, tag: &MorphTag, rng: &mut ChaCha20Rng) -> SampledForm {
        let enc = self.encode(lemma, tag);
        let cap = self.cap(lemma);
        let mut form = String::new();
        let mut state = self.start_state();
        let mut prev = None;
        loop {
            let (s2, dist, _) = self.decode_step(&enc, &state, prev);
            let mut probs: Vec<f64> = dist.iter().map(|&l| l.exp()).collect();
            probs[self.unk_class()] = 0.0;
            let class = sample_index(&probs, rng);
            if class == self.eos_class() {
                return SampledForm {
                    form,
                    truncated: false,
                };
            }
            form.push(self.chars[class]);
            if form.chars().count() >= cap {
                return SampledForm {
                    form,
                    truncated: true,
                };
            }
            state = s2;
            prev = Some(class);
        }
    }

    // ----- training ---------------------------------------------------------------

    /// Train with weighted (form, lemma, tag) triples: one AdaDelta step
    /// per triple per epoch on the weighted character cross-entropy, with
    /// dropout on embeddings and the attentional layer. Zero-weight triples
    /// are dropped up front, so a zero weight is exactly equivalent to
    /// removal.
    pub fn train(
        &mut self,
        data: &[(LexEntry, f64)],
        rng: &mut ChaCha20Rng,
    ) -> ModelResult<InflectorTrainReport> {
        if !(0.0..1.0).contains(&self.hyper.dropout) {
            return Err(ModelError::Config(format!(
                "dropout {} must lie in [0, 1)",
                self.hyper.dropout
            )));
        }
        let kept: Vec<(LexEntry, f64)> = data
            .iter()
            .filter(|(_, w)| *w != 0.0)
            .cloned()
            .collect();
        if kept.is_empty() {
            return Err(ModelError::Config(
                "inflection model training needs at least one nonzero-weight triple".into(),
            ));
        }
        for (_, w) in &kept {
            if !w.is_finite() || *w < 0.0 {
                return Err(ModelError::Config(format!("invalid triple weight {w}")));
            }
        }
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
                let (entry, weight) = &kept[idx];
                let mut tape = Tape::new(&self.store);
                let (loss, n) = self.triple_loss(&mut tape, entry, Some(rng))?;
                let weighted = tape.scale(loss, *weight);
                epoch_loss += tape.value(loss).item() * weight;
                epoch_steps += *weight * n as f64;
                let grads = tape.backward(weighted)?;
                self.store.accumulate(&grads);
                self.store.adadelta_step(self.hyper.rho, self.hyper.eps)?;
            }
            final_train_loss = if epoch_steps > 0.0 {
                epoch_loss / epoch_steps
            } else {
                0.0
            };
        }
        Ok(InflectorTrainReport { final_train_loss })
    }

    // ----- persistence ------------------------------------------------------------

    const SIDECAR_HEADER: &'static str = "morphogen-inflector v1";

    /// Text sidecar: dims, cell kind, and the symbol vocabulary.
    pub fn sidecar(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{}", Self::SIDECAR_HEADER).unwrap();
        writeln!(out, "embed {}", self.hyper.embed).unwrap();
        writeln!(out, "enc_hidden {}", self.hyper.enc_hidden).unwrap();
        writeln!(out, "dec_hidden {}", self.hyper.dec_hidden).unwrap();
        writeln!(out, "cell {}", self.hyper.cell.name()).unwrap();
        for s in &self.syms {
            match s {
                SrcSym::Open | SrcSym::Close | SrcSym::Unk => {} // implicit
                SrcSym::Pos(p) => writeln!(out, "pos {p}").unwrap(),
                SrcSym::Pair(a, v) => writeln!(out, "pair {a}={v}").unwrap(),
                SrcSym::Char(c) => writeln!(out, "char U+{:04X}", *c as u32).unwrap(),
            }
        }
        out
    }

    /// Save parameters and sidecar to `dir` as `inflector.params` /
    /// `inflector.vocab`.
    pub fn save(&self, dir: &std::path::Path) -> ModelResult<()> {
        let mut f = std::fs::File::create(dir.join("inflector.params"))?;
        write_params(&self.store, &mut f)?;
        std::fs::write(dir.join("inflector.vocab"), self.sidecar())?;
        Ok(())
    }

    /// Load a model saved by [`Inflector::save`]. Training and decoding
    /// settings come from `hyper`; dims and cell kind come from the sidecar.
    pub fn load(dir: &std::path::Path, mut hyper: InflectorHyper) -> ModelResult<Self> {
        let sidecar = std::fs::read_to_string(dir.join("inflector.vocab"))?;
        let mut lines = sidecar.lines();
        if lines.next() != Some(Self::SIDECAR_HEADER) {
            return Err(ModelError::MalformedModel(
                "inflection model sidecar header mismatch".into(),
            ));
        }
        let mut chars: BTreeSet<char> = BTreeSet::new();
        let mut pos: BTreeSet<String> = BTreeSet::new();
        let mut pairs: BTreeSet<(String, String)> = BTreeSet::new();
        let mut dims: BTreeMap<String, usize> = BTreeMap::new();
        let mut cell = None;
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let (kind, rest) = line.split_once(' ').ok_or_else(|| {
                ModelError::MalformedModel(format!("bad sidecar line {line:?}"))
            })?;
            match kind {
                "embed" | "enc_hidden" | "dec_hidden" => {
                    let v = rest.parse().map_err(|_| {
                        ModelError::MalformedModel(format!("bad dimension in {line:?}"))
                    })?;
                    dims.insert(kind.to_string(), v);
                }
                "cell" => {
                    cell = Some(CellKind::parse(rest).ok_or_else(|| {
                        ModelError::MalformedModel(format!("unknown cell kind {rest:?}"))
                    })?);
                }
                "pos" => {
                    pos.insert(rest.to_string());
                }
                "pair" => {
                    let (a, v) = rest.split_once('=').ok_or_else(|| {
                        ModelError::MalformedModel(format!("bad pair line {line:?}"))
                    })?;
                    pairs.insert((a.to_string(), v.to_string()));
                }
                "char" => {
                    let hex = rest.strip_prefix("U+").ok_or_else(|| {
                        ModelError::MalformedModel(format!("bad char line {line:?}"))
                    })?;
                    let code = u32::from_str_radix(hex, 16).map_err(|_| {
                        ModelError::MalformedModel(format!("bad char line {line:?}"))
                    })?;
                    chars.insert(char::from_u32(code).ok_or_else(|| {
                        ModelError::MalformedModel(format!("bad codepoint in {line:?}"))
                    })?);
                }
                _ => {
                    return Err(ModelError::MalformedModel(format!(
                        "unknown sidecar line {line:?}"
                    )))
                }
            }
        }
        for key in ["embed", "enc_hidden", "dec_hidden"] {
            if !dims.contains_key(key) {
                return Err(ModelError::MalformedModel(format!(
                    "sidecar missing dimension {key}"
                )));
            }
        }
        hyper.embed = dims["embed"];
        hyper.enc_hidden = dims["enc_hidden"];
        hyper.dec_hidden = dims["dec_hidden"];
        hyper.cell = cell.ok_or_else(|| {
            ModelError::MalformedModel("sidecar missing cell kind".into())
        })?;
        let mut init_rng = crate::num::derive_rng(0, "inflector/load");
        let mut model = Inflector::with_vocab(&chars, &pos, &pairs, hyper, &mut init_rng)?;
        let mut f = std::fs::File::open(dir.join("inflector.params"))?;
        let loaded = read_params(&mut f)?;
        model.store.set_values(&loaded)?;
        Ok(model)
    }
}
