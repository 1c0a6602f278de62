//! Language model over morphological tag sequences.
//!
//! A stacked LSTM reads a sentence's tags left to right and predicts the
//! next tag at every position, with an end-of-sequence class closing the
//! sentence, so the per-sequence probabilities normalize over all finite
//! tag sequences. Tags enter the network as the sum of the embeddings of
//! their parts (the POS and each attribute–value pair); the output layer
//! ranges over the whole tags observed in training plus end-of-sequence.
//! The first prediction comes from a learned initial state — there is no
//! explicit beginning-of-sequence token.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::data::{MorphTag, TagInventory};
use crate::num::{
    dropout_mask, read_params, write_params, LstmCell, ParamId, ParamStore, RecurrentState, Tape,
    Tensor, Var,
};
use crate::{ModelError, ModelResult};

/// Hyperparameters for [`TagLm`].
#[derive(Debug, Clone)]
pub struct TagLmHyper {
    pub embed: usize,
    pub hidden: usize,
    pub layers: usize,
    pub epochs: usize,
    pub lr: f64,
    pub dropout: f64,
    pub clip: f64,
    /// Cap on sampled sequence length.
    pub max_sample_len: usize,
}

impl Default for TagLmHyper {
    fn default() -> Self {
        TagLmHyper {
            embed: 200,
            hidden: 200,
            layers: 2,
            epochs: 40,
            lr: 20.0,
            dropout: 0.2,
            clip: 0.25,
            max_sample_len: 30,
        }
    }
}

/// Input-side symbol: a POS name or an attribute–value pair, each with its
/// own embedding row; one shared UNK row catches anything unseen.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum InSym {
    Pos(String),
    Pair(String, String),
}

/// A sampled tag sequence plus whether the length cap cut it off.
#[derive(Debug, Clone)]
pub struct SampledTags {
    pub tags: Vec<MorphTag>,
    pub truncated: bool,
}

/// Report returned by [`TagLm::train`].
#[derive(Debug, Clone)]
pub struct TagLmTrainReport {
    /// Weighted mean per-prediction cross-entropy over the training part in
    /// the final epoch.
    pub final_train_loss: f64,
    /// Same over the held-out validation part (absent when the validation
    /// split is empty).
    pub final_val_loss: Option<f64>,
}

/// Recurrent state as plain values, for incremental scoring and sampling.
#[derive(Debug, Clone)]
pub struct TagLmState {
    /// Per layer: hidden vector and memory cell.
    layers: Vec<(Tensor, Tensor)>,
}

/// The tag-sequence language model.
#[derive(Debug, Clone)]
pub struct TagLm {
    hyper: TagLmHyper,
    store: ParamStore,
    cells: Vec<LstmCell>,
    embed: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    in_syms: Vec<InSym>,
    in_index: BTreeMap<InSym, usize>,
    /// Output classes in index order; the class after the last is EOS.
    out_tags: Vec<MorphTag>,
    out_index: BTreeMap<MorphTag, usize>,
}

impl TagLm {
    /// Build an untrained model over the given inventory. `rng` drives
    /// parameter initialization.
    pub fn new(
        inventory: &TagInventory,
        hyper: TagLmHyper,
        rng: &mut ChaCha20Rng,
    ) -> ModelResult<Self> {
        if inventory.tags.is_empty() {
            return Err(ModelError::Config(
                "tag language model needs a nonempty tag inventory".into(),
            ));
        }
        if hyper.layers == 0 {
            return Err(ModelError::Config("tag language model needs >= 1 layer".into()));
        }
        let mut in_syms: Vec<InSym> = Vec::new();
        for p in &inventory.pos {
            in_syms.push(InSym::Pos(p.clone()));
        }
        for (a, v) in &inventory.pairs {
            in_syms.push(InSym::Pair(a.clone(), v.clone()));
        }
        let in_index: BTreeMap<InSym, usize> = in_syms
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, s)| (s, i))
            .collect();
        let out_tags: Vec<MorphTag> = inventory.tags.iter().cloned().collect();
        let out_index: BTreeMap<MorphTag, usize> = out_tags
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, t)| (t, i))
            .collect();

        let mut store = ParamStore::new();
        // Rows: one per symbol plus the trailing UNK row.
        let embed = store.add_matrix("embed", in_syms.len() + 1, hyper.embed, rng)?;
        let mut cells = Vec::new();
        for l in 0..hyper.layers {
            let input = if l == 0 { hyper.embed } else { hyper.hidden };
            cells.push(LstmCell::new(
                &mut store,
                rng,
                &format!("layer{l}"),
                input,
                hyper.hidden,
            )?);
        }
        let out_w = store.add_matrix("out.w", out_tags.len() + 1, hyper.hidden, rng)?;
        let out_b = store.add_zero_vector("out.b", out_tags.len() + 1)?;
        Ok(TagLm {
            hyper,
            store,
            cells,
            embed,
            out_w,
            out_b,
            in_syms,
            in_index,
            out_tags,
            out_index,
        })
    }

    pub fn hyper(&self) -> &TagLmHyper {
        &self.hyper
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Output classes in index order (EOS is the implicit final class).
    pub fn output_tags(&self) -> &[MorphTag] {
        &self.out_tags
    }

    /// Class index of a tag, or None when the tag was never observed (its
    /// probability under the model is zero).
    pub fn class_of(&self, tag: &MorphTag) -> Option<usize> {
        self.out_index.get(tag).copied()
    }

    pub fn eos_class(&self) -> usize {
        self.out_tags.len()
    }

    /// Embedding rows for a tag: POS row plus one row per attribute–value
    /// pair, unknown parts falling back to the shared UNK row.
    fn embed_rows(&self, tag: &MorphTag) -> Vec<usize> {
        let unk = self.in_syms.len();
        let mut rows = Vec::with_capacity(1 + tag.slot.len());
        rows.push(
            self.in_index
                .get(&InSym::Pos(tag.pos.clone()))
                .copied()
                .unwrap_or(unk),
        );
        for (a, v) in tag.slot.pairs() {
            rows.push(
                self.in_index
                    .get(&InSym::Pair(a.to_string(), v.to_string()))
                    .copied()
                    .unwrap_or(unk),
            );
        }
        rows
    }

    fn embed_var(&self, tape: &mut Tape, tag: &MorphTag) -> ModelResult<Var> {
        let m = tape.param(self.embed);
        Ok(tape.row_sum(m, &self.embed_rows(tag))?)
    }

    // ----- incremental evaluation -------------------------------------------------

    /// State before any tag has been consumed (the learned initial state).
    pub fn start_state(&self) -> TagLmState {
        let layers = self
            .cells
            .iter()
            .map(|c| {
                let mut tape = Tape::new(&self.store);
                let s = c.initial_state(&mut tape);
                (
                    tape.value(s.h).clone(),
                    tape.value(s.c.expect("lstm state")).clone(),
                )
            })
            .collect();
        TagLmState { layers }
    }

    /// Log-probabilities over output classes (observed tags, then EOS) from
    /// a state.
    pub fn next_log_dist(&self, state: &TagLmState) -> Vec<f64> {
        let mut tape = Tape::new(&self.store);
        let h = tape.input(state.layers.last().expect("layers").0.clone());
        let w = tape.param(self.out_w);
        let b = tape.param(self.out_b);
        let logits = tape.affine(w, h, b).expect("shapes fixed at construction");
        let xs = tape.value(logits).data();
        let lse = crate::num::logsumexp(xs);
        xs.iter().map(|&x| x - lse).collect()
    }

    /// Consume one tag, returning the successor state.
    pub fn advance(&self, state: &TagLmState, tag: &MorphTag) -> TagLmState {
        let mut tape = Tape::new(&self.store);
        let mut x = self.embed_var(&mut tape, tag).expect("embed shapes fixed");
        let mut layers = Vec::with_capacity(self.cells.len());
        for (cell, (h, c)) in self.cells.iter().zip(&state.layers) {
            let hv = tape.input(h.clone());
            let cv = tape.input(c.clone());
            let s = RecurrentState {
                h: hv,
                c: Some(cv),
            };
            let s2 = cell.step(&mut tape, &s, x).expect("shapes fixed");
            layers.push((
                tape.value(s2.h).clone(),
                tape.value(s2.c.expect("lstm state")).clone(),
            ));
            x = s2.h;
        }
        TagLmState { layers }
    }

    /// Per-step log-probabilities of a sequence: one entry per tag plus the
    /// final EOS step. None when any tag is outside the output inventory.
    pub fn step_logprobs(&self, tags: &[MorphTag]) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(tags.len() + 1);
        let mut state = self.start_state();
        for tag in tags {
            let class = self.class_of(tag)?;
            let dist = self.next_log_dist(&state);
            out.push(dist[class]);
            state = self.advance(&state, tag);
        }
        let dist = self.next_log_dist(&state);
        out.push(dist[self.eos_class()]);
        Some(out)
    }

    /// Total log-probability of a terminated tag sequence.
    pub fn logprob(&self, tags: &[MorphTag]) -> Option<f64> {
        self.step_logprobs(tags).map(|steps| steps.iter().sum())
    }

    /// Ancestral sampling. Stops at EOS or after `max_len` tags, in which
    /// case `truncated` is set.
    pub fn sample(&self, rng: &mut ChaCha20Rng, max_len: usize) -> SampledTags {
        let mut tags = Vec::new();
        let mut state = self.start_state();
        loop {
            let dist = self.next_log_dist(&state);
            let probs: Vec<f64> = dist.iter().map(|&l| l.exp()).collect();
            let class = sample_index(&probs, rng);
            if class == self.eos_class() {
                return SampledTags {
                    tags,
                    truncated: false,
                };
            }
            let tag = self.out_tags[class].clone();
            state = self.advance(&state, &tag);
            tags.push(tag);
            if tags.len() >= max_len {
                return SampledTags {
                    tags,
                    truncated: true,
                };
            }
        }
    }

    // ----- training ---------------------------------------------------------------

    /// Loss (sum of per-step cross-entropies) of one sequence on a tape,
    /// with dropout masks drawn from `drop_rng` when given. Also returns
    /// the number of prediction steps.
    fn sequence_loss(
        &self,
        tape: &mut Tape,
        tags: &[MorphTag],
        classes: &[usize],
        drop_rng: Option<&mut ChaCha20Rng>,
    ) -> ModelResult<(Var, usize)> {
        let mut states: Vec<RecurrentState> = self
            .cells
            .iter()
            .map(|c| c.initial_state(tape))
            .collect();
        let mut rng = drop_rng;
        let mut losses = Vec::with_capacity(tags.len() + 1);
        for i in 0..=tags.len() {
            // Predict class i from the current topmost hidden state.
            let mut h = states.last().expect("layers").h;
            if let Some(r) = rng.as_deref_mut() {
                let mask = dropout_mask(self.hyper.hidden, self.hyper.dropout, r)?;
                h = tape.mask_mul(h, mask)?;
            }
            let w = tape.param(self.out_w);
            let b = tape.param(self.out_b);
            let logits = tape.affine(w, h, b)?;
            let target = if i < tags.len() {
                classes[i]
            } else {
                self.eos_class()
            };
            losses.push(tape.cross_entropy(logits, target)?);
            // Consume tag i.
            if i < tags.len() {
                let mut x = self.embed_var(tape, &tags[i])?;
                if let Some(r) = rng.as_deref_mut() {
                    let mask = dropout_mask(self.hyper.embed, self.hyper.dropout, r)?;
                    x = tape.mask_mul(x, mask)?;
                }
                for (l, cell) in self.cells.iter().enumerate() {
                    let mut s2 = cell.step(tape, &states[l], x)?;
                    if l + 1 < self.cells.len() {
                        if let Some(r) = rng.as_deref_mut() {
                            let mask = dropout_mask(self.hyper.hidden, self.hyper.dropout, r)?;
                            s2 = RecurrentState {
                                h: tape.mask_mul(s2.h, mask)?,
                                c: s2.c,
                            };
                        }
                    }
                    x = s2.h;
                    states[l] = s2;
                }
            }
        }
        let total = tape.sum_scalars(&losses)?;
        Ok((total, tags.len() + 1))
    }

    /// Weighted mean per-step loss over a dataset, without dropout.
    fn eval_loss(&self, data: &[(Vec<MorphTag>, f64)]) -> ModelResult<Option<f64>> {
        let mut total = 0.0;
        let mut steps = 0.0;
        for (tags, weight) in data {
            let classes: Vec<usize> = tags
                .iter()
                .map(|t| self.class_of(t))
                .collect::<Option<_>>()
                .ok_or_else(|| {
                    ModelError::Config("training sequence contains a tag outside the inventory".into())
                })?;
            let mut tape = Tape::new(&self.store);
            let (loss, n) = self.sequence_loss(&mut tape, tags, &classes, None)?;
            total += weight * tape.value(loss).item();
            steps += weight * n as f64;
        }
        Ok(if steps > 0.0 { Some(total / steps) } else { None })
    }

    /// Train with per-sequence weights.
    ///
    /// Zero-weight sequences are dropped up front (so a zero weight is
    /// exactly equivalent to removing the sequence). Every tenth sequence
    /// is held out as the validation split; one SGD step is taken per
    /// training sequence per epoch with gradients clipped to `clip` global
    /// norm, and the learning rate is quartered after any epoch whose
    /// validation loss reaches a new minimum.
    pub fn train(
        &mut self,
        data: &[(Vec<MorphTag>, f64)],
        rng: &mut ChaCha20Rng,
    ) -> ModelResult<TagLmTrainReport> {
        if !(self.hyper.lr.is_finite() && self.hyper.lr >= 0.0) {
            return Err(ModelError::Config(format!(
                "learning rate {} must be finite and nonnegative",
                self.hyper.lr
            )));
        }
        let kept: Vec<(Vec<MorphTag>, f64)> = data.iter().filter(|(_, w)| *w != 0.0).cloned().collect();
        if kept.is_empty() {
            return Err(ModelError::Config(
                "tag language model training needs at least one nonzero-weight sequence".into(),
            ));
        }
        for (tags, w) in &kept {
            if !w.is_finite() || *w < 0.0 {
                return Err(ModelError::Config(format!("invalid sequence weight {w}")));
            }
            for t in tags {
                if self.class_of(t).is_none() {
                    return Err(ModelError::Config(format!(
                        "training sequence contains tag {t} outside the inventory"
                    )));
                }
            }
        }
        let mut train_part = Vec::new();
        let mut val_part = Vec::new();
        for (i, ex) in kept.into_iter().enumerate() {
            if i % 10 == 9 {
                val_part.push(ex);
            } else {
                train_part.push(ex);
            }
        }
        let mut lr = self.hyper.lr;
        let mut best_val = f64::INFINITY;
        let mut final_train_loss = 0.0;
        for _epoch in 0..self.hyper.epochs {
            // Deterministic per-epoch shuffle of training order.
            let mut order: Vec<usize> = (0..train_part.len()).collect();
            for i in (1..order.len()).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            let mut epoch_loss = 0.0;
            let mut epoch_steps = 0.0;
            for &idx in &order {
                let (tags, weight) = &train_part[idx];
                let classes: Vec<usize> =
                    tags.iter().map(|t| self.class_of(t).unwrap()).collect();
                let mut tape = Tape::new(&self.store);
                let (loss, n) = self.sequence_loss(&mut tape, tags, &classes, Some(rng))?;
                let weighted = tape.scale(loss, *weight);
                epoch_loss += tape.value(loss).item() * weight;
                epoch_steps += *weight * n as f64;
                let grads = tape.backward(weighted)?;
                self.store.accumulate(&grads);
                // A zero learning rate is a valid null update.
                if lr > 0.0 {
                    self.store.sgd_step(lr, Some(self.hyper.clip), 0.0)?;
                } else {
                    self.store.zero_grads();
                }
            }
            final_train_loss = if epoch_steps > 0.0 {
                epoch_loss / epoch_steps
            } else {
                0.0
            };
            if let Some(val_loss) = self.eval_loss(&val_part)? {
                if val_loss < best_val {
                    best_val = val_loss;
                    lr /= 4.0;
                }
            }
        }
        let final_val_loss = self.eval_loss(&val_part)?;
        Ok(TagLmTrainReport {
            final_train_loss,
            final_val_loss,
        })
    }

    // ----- persistence ------------------------------------------------------------

    const SIDECAR_HEADER: &'static str = "morphogen-taglm v1";

    /// Text sidecar: dims plus the input-symbol and output-tag listings in
    /// index order.
    pub fn sidecar(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{}", Self::SIDECAR_HEADER).unwrap();
        writeln!(out, "embed {}", self.hyper.embed).unwrap();
        writeln!(out, "hidden {}", self.hyper.hidden).unwrap();
        writeln!(out, "layers {}", self.hyper.layers).unwrap();
        writeln!(out, "max_sample_len {}", self.hyper.max_sample_len).unwrap();
        for s in &self.in_syms {
            match s {
                InSym::Pos(p) => writeln!(out, "pos {p}").unwrap(),
                InSym::Pair(a, v) => writeln!(out, "pair {a}={v}").unwrap(),
            }
        }
        for t in &self.out_tags {
            writeln!(out, "tag {t}").unwrap();
        }
        out
    }

    /// Save parameters and sidecar to `dir` as `taglm.params` /
    /// `taglm.vocab`.
    pub fn save(&self, dir: &std::path::Path) -> ModelResult<()> {
        let mut f = std::fs::File::create(dir.join("taglm.params"))?;
        write_params(&self.store, &mut f)?;
        std::fs::write(dir.join("taglm.vocab"), self.sidecar())?;
        Ok(())
    }

    /// Load a model saved by [`TagLm::save`]. Remaining hyperparameters
    /// (training settings) come from `hyper`; dims are taken from the
    /// sidecar and must agree with the parameter file.
    pub fn load(dir: &std::path::Path, mut hyper: TagLmHyper) -> ModelResult<Self> {
        let sidecar = std::fs::read_to_string(dir.join("taglm.vocab"))?;
        let mut lines = sidecar.lines();
        if lines.next() != Some(Self::SIDECAR_HEADER) {
            return Err(ModelError::MalformedModel(
                "tag model sidecar header mismatch".into(),
            ));
        }
        let mut inventory = TagInventory::default();
        let mut dims: BTreeMap<String, usize> = BTreeMap::new();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let (kind, rest) = line.split_once(' ').ok_or_else(|| {
                ModelError::MalformedModel(format!("bad sidecar line {line:?}"))
            })?;
            match kind {
                "embed" | "hidden" | "layers" | "max_sample_len" => {
                    let v = rest.parse().map_err(|_| {
                        ModelError::MalformedModel(format!("bad dimension in {line:?}"))
                    })?;
                    dims.insert(kind.to_string(), v);
                }
                "pos" => {
                    inventory.pos.insert(rest.to_string());
                }
                "pair" => {
                    let (a, v) = rest.split_once('=').ok_or_else(|| {
                        ModelError::MalformedModel(format!("bad pair line {line:?}"))
                    })?;
                    inventory.pairs.insert((a.to_string(), v.to_string()));
                }
                "tag" => {
                    inventory.tags.insert(MorphTag::parse(rest)?);
                }
                _ => {
                    return Err(ModelError::MalformedModel(format!(
                        "unknown sidecar line {line:?}"
                    )))
                }
            }
        }
        for key in ["embed", "hidden", "layers", "max_sample_len"] {
            if !dims.contains_key(key) {
                return Err(ModelError::MalformedModel(format!(
                    "sidecar missing dimension {key}"
                )));
            }
        }
        hyper.embed = dims["embed"];
        hyper.hidden = dims["hidden"];
        hyper.layers = dims["layers"];
        hyper.max_sample_len = dims["max_sample_len"];
        // Construction order is deterministic; values are overwritten below,
        // so the init RNG seed is irrelevant.
        let mut init_rng = crate::num::derive_rng(0, "taglm/load");
        let mut model = TagLm::new(&inventory, hyper, &mut init_rng)?;
        let mut f = std::fs::File::open(dir.join("taglm.params"))?;
        let pairs = read_params(&mut f)?;
        model.store.set_values(&pairs)?;
        Ok(model)
    }
}

/// Draw an index from an (unnormalized) probability vector.
pub(crate) fn sample_index(probs: &[f64], rng: &mut ChaCha20Rng) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random_range(0.0..1.0) * total;
    for (i, &p) in probs.iter().enumerate() {
        u -= p;
        if u <= 0.0 {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Slot;
    use crate::num::derive_rng;
    use rand::SeedableRng;

    fn tag(s: &str) -> MorphTag {
        MorphTag::parse(s).unwrap()
    }

    fn tiny_inventory() -> TagInventory {
        let mut inv = TagInventory::default();
        inv.observe(&tag("N;num=pl"));
        inv.observe(&tag("V;tns=pst"));
        inv
    }

    fn tiny_hyper() -> TagLmHyper {
        TagLmHyper {
            embed: 8,
            hidden: 8,
            layers: 2,
            epochs: 40,
            lr: 20.0,
            dropout: 0.2,
            clip: 0.25,
            max_sample_len: 30,
        }
    }

    fn tiny_model(seed: u64) -> TagLm {
        let mut rng = derive_rng(seed, "test/taglm");
        TagLm::new(&tiny_inventory(), tiny_hyper(), &mut rng).unwrap()
    }

    #[test]
    fn per_step_distributions_normalize() {
        let model = tiny_model(1);
        let mut state = model.start_state();
        for tag_text in ["N;num=pl", "V;tns=pst", "N;num=pl"] {
            let dist = model.next_log_dist(&state);
            let mass: f64 = dist.iter().map(|l| l.exp()).sum();
            assert!((mass - 1.0).abs() < 1e-9, "mass {mass}");
            state = model.advance(&state, &tag(tag_text));
        }
    }

    #[test]
    fn sequence_logprob_is_sum_of_step_scores() {
        let model = tiny_model(2);
        let seq = vec![tag("N;num=pl"), tag("V;tns=pst"), tag("N;num=pl")];
        let steps = model.step_logprobs(&seq).unwrap();
        assert_eq!(steps.len(), 4); // three tags plus EOS
        let total = model.logprob(&seq).unwrap();
        let sum: f64 = steps.iter().sum();
        assert!((total - sum).abs() < 1e-10);
    }

    #[test]
    fn unknown_tag_scores_as_impossible() {
        let model = tiny_model(3);
        assert!(model.logprob(&[tag("ADJ")]).is_none());
        assert!(model
            .logprob(&[tag("N;num=pl"), tag("N;num=sg")])
            .is_none());
    }

    #[test]
    fn empty_sequence_gets_the_eos_mass() {
        let model = tiny_model(4);
        let lp = model.logprob(&[]).unwrap();
        let dist = model.next_log_dist(&model.start_state());
        assert!((lp - dist[model.eos_class()]).abs() < 1e-12);
    }

    #[test]
    fn bounded_length_mass_reaches_one_with_eos_biased_output() {
        // Bias the EOS logit so that continuation probability is tiny, then
        // sum exp(logprob) over every terminated sequence of length <= 20 by
        // depth-first enumeration with incremental states.
        let mut model = tiny_model(5);
        let eos = model.eos_class();
        let out_b = model.store.lookup("out.b").unwrap();
        model.store.value_mut(out_b).data_mut()[eos] = 8.0;

        let mut mass = 0.0;
        // Stack of (state, depth, accumulated logprob).
        let mut stack = vec![(model.start_state(), 0usize, 0.0f64)];
        while let Some((state, depth, acc)) = stack.pop() {
            let dist = model.next_log_dist(&state);
            mass += (acc + dist[eos]).exp();
            if depth < 20 {
                for (class, t) in model.output_tags().iter().enumerate() {
                    stack.push((model.advance(&state, t), depth + 1, acc + dist[class]));
                }
            }
        }
        assert!((mass - 1.0).abs() < 1e-6, "total mass {mass}");
    }

    #[test]
    fn sampling_matches_model_distribution_on_peaked_model() {
        // With a strongly EOS-biased output the empty sequence dominates;
        // sampled frequencies must match the model probabilities within a
        // 3-sigma multinomial bound.
        let mut model = tiny_model(6);
        let eos = model.eos_class();
        let out_b = model.store.lookup("out.b").unwrap();
        model.store.value_mut(out_b).data_mut()[eos] = 2.0;

        let n = 100_000;
        let mut rng = derive_rng(0xfeed, "test/taglm/sample");
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for _ in 0..n {
            let s = model.sample(&mut rng, 30);
            assert!(!s.truncated);
            let key = s
                .tags
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            *counts.entry(key).or_insert(0) += 1;
        }
        // Check the empty sequence and each single-tag sequence.
        let check = |tags: Vec<MorphTag>| {
            let p = model.logprob(&tags).unwrap().exp();
            let key = tags
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            let freq = *counts.get(&key).unwrap_or(&0) as f64 / n as f64;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (freq - p).abs() <= 3.0 * sigma.max(1e-9),
                "sequence {key:?}: freq {freq:.5} vs p {p:.5}"
            );
        };
        check(vec![]);
        check(vec![tag("N;num=pl")]);
        check(vec![tag("V;tns=pst")]);
    }

    #[test]
    fn sampling_respects_length_cap() {
        // Bias EOS heavily *against* stopping: all-mass continuation would
        // run forever without the cap.
        let mut model = tiny_model(7);
        let eos = model.eos_class();
        let out_b = model.store.lookup("out.b").unwrap();
        model.store.value_mut(out_b).data_mut()[eos] = -30.0;
        let mut rng = derive_rng(1, "test/taglm/cap");
        let s = model.sample(&mut rng, 5);
        assert_eq!(s.tags.len(), 5);
        assert!(s.truncated);
    }

    #[test]
    fn training_gradient_matches_finite_differences() {
        use crate::num::{finite_diff_grad, rel_err_norm};
        let model = tiny_model(8);
        let seq = vec![tag("N;num=pl"), tag("V;tns=pst")];
        let classes: Vec<usize> = seq.iter().map(|t| model.class_of(t).unwrap()).collect();
        let mut store = model.store.clone();
        // Analytic gradient of the (dropout-free) sequence loss.
        let grads = {
            let mut tape = Tape::new(&store);
            let (loss, _) = model.sequence_loss(&mut tape, &seq, &classes, None).unwrap();
            tape.backward(loss).unwrap()
        };
        for id in store.ids().collect::<Vec<_>>() {
            let fd = finite_diff_grad(&mut store, id, 1e-5, |s| {
                // Rebuild the loss against the perturbed store. The model's
                // own store is shadowed: construct a view model sharing
                // vocabularies but reading parameters from `s`.
                let view = TagLm {
                    store: s.clone(),
                    ..model.clone()
                };
                let mut tape = Tape::new(&view.store);
                let (loss, _) = view
                    .sequence_loss(&mut tape, &seq, &classes, None)
                    .unwrap();
                tape.value(loss).item()
            });
            let analytic = grads
                .get(id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(store.value(id).shape()));
            let err = rel_err_norm(&analytic, &fd);
            assert!(
                err < 1e-5,
                "param {} mismatch: {err:.2e}",
                store.param(id).name
            );
        }
    }

    #[test]
    fn overfits_single_repeated_sentence() {
        // A single repeated one-tag sentence must be driven to near-zero
        // per-step loss within the default 40 epochs.
        let mut inv = TagInventory::default();
        inv.observe(&tag("N;num=pl"));
        let mut rng = derive_rng(9, "test/taglm/overfit");
        let mut model = TagLm::new(
            &inv,
            TagLmHyper {
                embed: 8,
                hidden: 8,
                layers: 1,
                ..tiny_hyper()
            },
            &mut rng,
        )
        .unwrap();
        let data: Vec<(Vec<MorphTag>, f64)> =
            (0..20).map(|_| (vec![tag("N;num=pl")], 1.0)).collect();
        let mut train_rng = derive_rng(9, "test/taglm/overfit/train");
        let report = model.train(&data, &mut train_rng).unwrap();
        assert!(
            report.final_train_loss < 0.01,
            "loss {}",
            report.final_train_loss
        );
    }

    #[test]
    fn zero_weight_equals_removal() {
        let data_a: Vec<(Vec<MorphTag>, f64)> = vec![
            (vec![tag("N;num=pl")], 1.0),
            (vec![tag("V;tns=pst"), tag("N;num=pl")], 1.0),
            (vec![tag("V;tns=pst")], 0.0),
        ];
        let data_b: Vec<(Vec<MorphTag>, f64)> = vec![
            (vec![tag("N;num=pl")], 1.0),
            (vec![tag("V;tns=pst"), tag("N;num=pl")], 1.0),
        ];
        let mut out = Vec::new();
        for data in [&data_a, &data_b] {
            let mut model = tiny_model(10);
            model.hyper.epochs = 3;
            let mut rng = derive_rng(10, "test/taglm/zero-weight");
            model.train(data, &mut rng).unwrap();
            let mut bytes = Vec::new();
            write_params(model.store(), &mut bytes).unwrap();
            out.push(bytes);
        }
        assert_eq!(out[0], out[1], "zero-weight sequence changed training");
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut model = tiny_model(14);
        model.hyper.lr = 0.0;
        model.hyper.epochs = 2;
        let mut before = Vec::new();
        write_params(model.store(), &mut before).unwrap();
        let mut rng = derive_rng(14, "test/taglm/null");
        model
            .train(&[(vec![tag("N;num=pl")], 1.0)], &mut rng)
            .unwrap();
        let mut after = Vec::new();
        write_params(model.store(), &mut after).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn one_epoch_beats_the_uniform_baseline_on_train() {
        let mut model = tiny_model(15);
        model.hyper.epochs = 1;
        let data: Vec<(Vec<MorphTag>, f64)> =
            (0..20).map(|_| (vec![tag("N;num=pl")], 1.0)).collect();
        let mut rng = derive_rng(15, "test/taglm/epoch1");
        let report = model.train(&data, &mut rng).unwrap();
        // Uniform over 2 observed tags + EOS.
        let uniform = 3.0f64.ln();
        assert!(
            report.final_train_loss < uniform,
            "epoch-1 loss {} not below uniform {uniform}",
            report.final_train_loss
        );
    }

    #[test]
    fn mixed_pos_and_slot_sequence_scores_finitely() {
        // A four-token sentence mixing bare-POS tags with slotted ones must
        // get a finite score once every tag is in the inventory.
        let mut inv = TagInventory::default();
        let seq = vec![
            tag("prn;case=gen"),
            tag("n;num=pl"),
            tag("adv"),
            tag("v;tns=pst"),
        ];
        for t in &seq {
            inv.observe(t);
        }
        let mut rng = derive_rng(16, "test/taglm/mixed");
        let model = TagLm::new(&inv, tiny_hyper(), &mut rng).unwrap();
        let lp = model.logprob(&seq).unwrap();
        assert!(lp.is_finite() && lp < 0.0, "logprob {lp}");
    }

    #[test]
    fn tag_embedding_is_additive_in_its_parts() {
        // e(pos + pair) = e(pos) + row(pair), because a tag embeds as the
        // sum of the rows of its parts.
        let model = tiny_model(17);
        let full = {
            let mut tape = Tape::new(&model.store);
            let v = model.embed_var(&mut tape, &tag("V;tns=pst")).unwrap();
            tape.value(v).clone()
        };
        let pos_only = {
            let mut tape = Tape::new(&model.store);
            let v = model.embed_var(&mut tape, &tag("V")).unwrap();
            tape.value(v).clone()
        };
        let pair_row = model.in_index[&InSym::Pair("tns".into(), "pst".into())];
        let emb = model.store.value(model.embed);
        for j in 0..model.hyper.embed {
            let want = pos_only.data()[j] + emb.row(pair_row)[j];
            assert!((full.data()[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn tag_embedding_matches_multi_hot_matrix_product() {
        // Independent oracle: build the multi-hot indicator over embedding
        // rows and multiply it into the matrix densely.
        let model = tiny_model(18);
        let t = tag("N;num=pl");
        let rows = model.embed_rows(&t);
        let emb = model.store.value(model.embed);
        let mut indicator = vec![0.0f64; emb.rows()];
        for r in &rows {
            indicator[*r] += 1.0;
        }
        let mut dense = vec![0.0f64; model.hyper.embed];
        for (r, &ind) in indicator.iter().enumerate() {
            for (d, v) in dense.iter_mut().zip(emb.row(r)) {
                *d += ind * v;
            }
        }
        let mut tape = Tape::new(&model.store);
        let v = model.embed_var(&mut tape, &t).unwrap();
        for (got, want) in tape.value(v).data().iter().zip(&dense) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_training_is_bit_reproducible() {
        let data: Vec<(Vec<MorphTag>, f64)> = vec![
            (vec![tag("N;num=pl"), tag("V;tns=pst")], 1.0),
            (vec![tag("V;tns=pst")], 0.5),
        ];
        let mut files = Vec::new();
        for _ in 0..2 {
            let mut model = tiny_model(11);
            model.hyper.epochs = 4;
            let mut rng = derive_rng(11, "test/taglm/repro");
            model.train(&data, &mut rng).unwrap();
            let mut bytes = Vec::new();
            write_params(model.store(), &mut bytes).unwrap();
            files.push(bytes);
        }
        assert_eq!(files[0], files[1]);
    }

    #[test]
    fn save_load_round_trips_scores() {
        let dir = tempfile::tempdir().unwrap();
        let model = tiny_model(12);
        model.save(dir.path()).unwrap();
        let loaded = TagLm::load(dir.path(), TagLmHyper::default()).unwrap();
        let seq = vec![tag("N;num=pl"), tag("V;tns=pst")];
        assert_eq!(model.logprob(&seq), loaded.logprob(&seq));
        assert_eq!(loaded.hyper().hidden, 8);
    }

    #[test]
    fn new_rejects_empty_inventory() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let inv = TagInventory::default();
        assert!(TagLm::new(&inv, TagLmHyper::default(), &mut rng).is_err());
    }

    #[test]
    fn unknown_parts_fall_back_to_unk_row() {
        let model = tiny_model(13);
        let unseen = MorphTag::new(
            "Q",
            Slot::from_pairs(vec![("mood".into(), "irr".into())]).unwrap(),
        )
        .unwrap();
        let rows = model.embed_rows(&unseen);
        let unk = model.in_syms.len();
        assert_eq!(rows, vec![unk, unk]);
    }
}
