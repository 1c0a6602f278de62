//! The inference network q(lemmata, tags | forms): a first-order
//! linear-chain CRF that jointly tags and lemmatizes a sentence.
//!
//! Lemma choices are represented by [`EditTree`]s, so each chain position
//! carries a joint label (morph tag, edit tree) drawn from the inventory
//! observed in training — every (tag, tree) pair whose tree applies to the
//! form, plus the identity tree with every observed tag as a fallback that
//! keeps candidate sets nonempty on any input. Scores are linear in sparse
//! character n-gram features; transitions are first-order over morph tags
//! only, and the edit-tree choice within a tag is summed out by the forward
//! recursion. Inference is exact: forward log-partition, Viterbi decoding,
//! forward-filtering backward-sampling, and forward-backward marginals.
//! Training maximizes the weighted conditional log-likelihood with L2
//! regularization by full-batch fixed-step gradient ascent, which makes it
//! deterministic — no randomness enters anywhere but sampling.

pub mod edit_tree;

pub use edit_tree::EditTree;

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use rand_chacha::ChaCha20Rng;

use crate::data::{AnnotatedSentence, MorphTag};
use crate::num::logsumexp;
use crate::taglm::sample_index;
use crate::{ModelError, ModelResult};

/// A chain label: one morph tag plus one lemmatization rule.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JointLabel {
    pub tag: MorphTag,
    pub tree: EditTree,
}

/// Training settings: fixed-step gradient ascent on the weighted mean
/// conditional log-likelihood with L2 strength `l2`.
#[derive(Debug, Clone)]
pub struct CrfHyper {
    pub step: f64,
    pub steps: usize,
    pub l2: f64,
}

impl Default for CrfHyper {
    fn default() -> Self {
        CrfHyper {
            step: 0.1,
            steps: 200,
            l2: 1.0,
        }
    }
}

/// Report returned by [`CrfModel::train`].
#[derive(Debug, Clone)]
pub struct CrfTrainReport {
    /// Final value of the maximized objective on the sum scale: weighted
    /// sum of sentence conditional log-likelihoods minus the L2 penalty.
    pub final_objective: f64,
    /// The data term alone: weighted sum of sentence conditional
    /// log-likelihoods at the final weights, without the L2 penalty.
    pub final_loglik: f64,
}

/// Viterbi decode of one sentence.
#[derive(Debug, Clone)]
pub struct MapDecode {
    pub lemmata: Vec<String>,
    pub tags: Vec<MorphTag>,
    /// Unnormalized score of the argmax label sequence (≤ the log
    /// partition).
    pub score: f64,
}

// ----- feature templates ------------------------------------------------------

/// Escape-free building block: character prefix/suffix strings of a form.
fn affixes(form: &str) -> (Vec<String>, Vec<String>) {
    let chars: Vec<char> = form.chars().collect();
    let n = chars.len();
    let mut prefixes = Vec::new();
    let mut suffixes = Vec::new();
    for k in 1..=n.min(3) {
        prefixes.push(chars[..k].iter().collect());
        suffixes.push(chars[n - k..].iter().collect());
    }
    (prefixes, suffixes)
}

/// Emission features of a label at one position: form prefixes and
/// suffixes up to length 3 conjoined with the tag and with the edit tree,
/// whole-form identity with each, and the suffixes of the adjacent forms
/// conjoined with the tag.
fn emission_features(forms: &[String], i: usize, label: &JointLabel) -> Vec<String> {
    let tag = label.tag.to_string();
    let tree = label.tree.to_string();
    let (prefixes, suffixes) = affixes(&forms[i]);
    let mut out = Vec::new();
    for (k, p) in prefixes.iter().enumerate() {
        out.push(format!("fp{}:{p}|t:{tag}", k + 1));
        out.push(format!("fp{}:{p}|e:{tree}", k + 1));
    }
    for (k, s) in suffixes.iter().enumerate() {
        out.push(format!("fs{}:{s}|t:{tag}", k + 1));
        out.push(format!("fs{}:{s}|e:{tree}", k + 1));
    }
    out.push(format!("w:{}|t:{tag}", forms[i]));
    out.push(format!("w:{}|e:{tree}", forms[i]));
    if i > 0 {
        let (_, left) = affixes(&forms[i - 1]);
        for (k, s) in left.iter().enumerate() {
            out.push(format!("nl{}:{s}|t:{tag}", k + 1));
        }
    }
    if i + 1 < forms.len() {
        let (_, right) = affixes(&forms[i + 1]);
        for (k, s) in right.iter().enumerate() {
            out.push(format!("nr{}:{s}|t:{tag}", k + 1));
        }
    }
    out
}

/// The transition feature between two tags (None = sentence start).
fn transition_feature(prev: Option<&MorphTag>, tag: &MorphTag) -> String {
    match prev {
        Some(p) => format!("tr:{p}>{tag}"),
        None => format!("tr:^>{tag}"),
    }
}

/// The full sparse feature set of a label at a position given the previous
/// tag: emission features plus the transition feature. The score of a
/// label sequence is the sum of its features' weights, which is exactly
/// what the chain recursions compute.
pub fn featurize(
    forms: &[String],
    i: usize,
    label: &JointLabel,
    prev_tag: Option<&MorphTag>,
) -> Vec<String> {
    let mut out = emission_features(forms, i, label);
    out.push(transition_feature(prev_tag, &label.tag));
    out
}

// ----- feature table ----------------------------------------------------------

#[derive(Debug, Clone, Default)]
struct FeatureTable {
    names: Vec<String>,
    index: HashMap<String, usize>,
    weights: Vec<f64>,
}

impl FeatureTable {
    fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        self.weights.push(0.0);
        id
    }

    fn weight(&self, name: &str) -> f64 {
        self.index.get(name).map_or(0.0, |&id| self.weights[id])
    }
}

// ----- the model --------------------------------------------------------------

/// A trained (or zero-initialized) chain model.
#[derive(Debug, Clone)]
pub struct CrfModel {
    labels: Vec<JointLabel>,
    tags: Vec<MorphTag>,
    feats: FeatureTable,
}

impl CrfModel {
    /// Train on weighted annotated sentences. The label inventory is every
    /// (tag, edit tree) pair extracted from the gold tokens plus the
    /// identity tree with every observed tag; each gold pair's own tree is
    /// therefore always a reachable candidate. Zero-weight sentences are
    /// dropped up front, so a zero weight is exactly equivalent to removal.
    pub fn train(
        data: &[(AnnotatedSentence, f64)],
        hyper: &CrfHyper,
    ) -> ModelResult<(CrfModel, CrfTrainReport)> {
        let trainer = Trainer::new(data, hyper)?;
        Ok(trainer.run(hyper))
    }

    pub fn labels(&self) -> &[JointLabel] {
        &self.labels
    }

    pub fn label(&self, id: usize) -> &JointLabel {
        &self.labels[id]
    }

    pub fn tags(&self) -> &[MorphTag] {
        &self.tags
    }

    /// Weight of a feature by name (0 for unknown features).
    pub fn feature_weight(&self, name: &str) -> f64 {
        self.feats.weight(name)
    }

    fn tag_id(&self, tag: &MorphTag) -> Option<usize> {
        self.tags.binary_search(tag).ok()
    }

    /// Transition weight matrix indexed [previous + 1][current] with row 0
    /// for the sentence start.
    fn transition_matrix(&self) -> Vec<Vec<f64>> {
        let mut trans = Vec::with_capacity(self.tags.len() + 1);
        for prev in std::iter::once(None).chain(self.tags.iter().map(Some)) {
            trans.push(
                self.tags
                    .iter()
                    .map(|t| self.feats.weight(&transition_feature(prev, t)))
                    .collect(),
            );
        }
        trans
    }

    /// Exact chain posterior over one sentence of forms. Candidate labels
    /// per position are the inventory labels whose tree applies to the
    /// form; the identity labels guarantee the set is never empty.
    pub fn posterior(&self, forms: &[String]) -> ModelResult<ChainPosterior<'_>> {
        if let Some(i) = forms.iter().position(|f| f.is_empty()) {
            return Err(ModelError::Config(format!("empty form at token {i}")));
        }
        let n = forms.len();
        let n_tags = self.tags.len();
        let mut cands = Vec::with_capacity(n);
        let mut emis = Vec::with_capacity(n);
        let mut by_tag = Vec::with_capacity(n);
        let mut lse_emis = Vec::with_capacity(n);
        for i in 0..n {
            let mut ids = Vec::new();
            let mut scores = Vec::new();
            let mut groups = vec![Vec::new(); n_tags];
            for (id, label) in self.labels.iter().enumerate() {
                if label.tree.apply(&forms[i]).is_none() {
                    continue;
                }
                let score: f64 = emission_features(forms, i, label)
                    .iter()
                    .map(|f| self.feats.weight(f))
                    .sum();
                let tag = self.tag_id(&label.tag).expect("label tags are in inventory");
                groups[tag].push(ids.len());
                ids.push(id);
                scores.push(score);
            }
            lse_emis.push(group_logsumexp(&groups, &scores));
            cands.push(ids);
            emis.push(scores);
            by_tag.push(groups);
        }
        let trans = self.transition_matrix();
        let (alpha, logz) = forward(&lse_emis, &trans);
        Ok(ChainPosterior {
            model: self,
            forms: forms.to_vec(),
            cands,
            emis,
            by_tag,
            lse_emis,
            trans,
            alpha,
            logz,
        })
    }

    /// Log partition of one sentence.
    pub fn logz(&self, forms: &[String]) -> ModelResult<f64> {
        Ok(self.posterior(forms)?.logz())
    }

    /// Viterbi decode of one sentence.
    pub fn map_decode(&self, forms: &[String]) -> ModelResult<MapDecode> {
        Ok(self.posterior(forms)?.map())
    }

    /// One exact posterior sample of (lemmata, tags) for one sentence.
    pub fn sample(
        &self,
        forms: &[String],
        rng: &mut ChaCha20Rng,
    ) -> ModelResult<(Vec<String>, Vec<MorphTag>)> {
        Ok(self.posterior(forms)?.sample(rng))
    }

    /// Conditional log-likelihood of one annotated sentence: the score of
    /// its gold label path (tags plus the edit trees extracted from each
    /// form–lemma pair) minus the log partition. Features absent from the
    /// model contribute zero, so this is total over any annotation.
    pub fn sentence_loglik(&self, sentence: &AnnotatedSentence) -> ModelResult<f64> {
        let forms = sentence.forms().to_vec();
        let logz = self.posterior(&forms)?.logz();
        let mut score = 0.0;
        let mut prev: Option<&MorphTag> = None;
        for (i, (form, lemma, tag)) in sentence.tokens().enumerate() {
            let label = JointLabel {
                tag: tag.clone(),
                tree: EditTree::extract(form, lemma),
            };
            for name in featurize(&forms, i, &label, prev) {
                score += self.feats.weight(&name);
            }
            prev = Some(tag);
        }
        Ok(score - logz)
    }

    /// Tab-separated diagnostic: per token the Viterbi lemma and tag with
    /// the posterior marginal of that label and of its tag.
    pub fn diagnostic_tsv(&self, forms: &[String]) -> ModelResult<String> {
        let post = self.posterior(forms)?;
        let (path, _) = post.viterbi();
        let marginals = post.marginals();
        let mut out = String::from("token\tform\tlemma\ttag\tp_label\tp_tag\n");
        for (i, &label_id) in path.iter().enumerate() {
            let label = self.label(label_id);
            let lemma = label
                .tree
                .apply(&forms[i])
                .expect("viterbi picks applicable trees");
            let p_label: f64 = marginals[i]
                .iter()
                .find(|(id, _)| *id == label_id)
                .map(|(_, p)| *p)
                .unwrap_or(0.0);
            let p_tag: f64 = marginals[i]
                .iter()
                .filter(|(id, _)| self.label(*id).tag == label.tag)
                .map(|(_, p)| p)
                .sum();
            writeln!(
                out,
                "{i}\t{}\t{lemma}\t{}\t{p_label:.6}\t{p_tag:.6}",
                forms[i], label.tag
            )
            .unwrap();
        }
        Ok(out)
    }

    // ----- persistence --------------------------------------------------------

    const HEADER: &'static str = "morphogen-crf v1";

    /// Serialize to `crf.model` in `dir`: the label inventory and the
    /// feature weight mapping, features sorted by name.
    pub fn save(&self, dir: &std::path::Path) -> ModelResult<()> {
        let mut out = String::new();
        writeln!(out, "{}", Self::HEADER).unwrap();
        for label in &self.labels {
            writeln!(out, "label\t{}\t{}", label.tag, label.tree).unwrap();
        }
        let mut order: Vec<usize> = (0..self.feats.names.len()).collect();
        order.sort_by(|&a, &b| self.feats.names[a].cmp(&self.feats.names[b]));
        for id in order {
            writeln!(
                out,
                "feat\t{}\t{}",
                edit_tree::escape_text(&self.feats.names[id]),
                self.feats.weights[id]
            )
            .unwrap();
        }
        std::fs::write(dir.join("crf.model"), out)?;
        Ok(())
    }

    /// Load a model saved by [`CrfModel::save`].
    pub fn load(dir: &std::path::Path) -> ModelResult<CrfModel> {
        let text = std::fs::read_to_string(dir.join("crf.model"))?;
        let mut lines = text.lines();
        if lines.next() != Some(Self::HEADER) {
            return Err(ModelError::MalformedModel(
                "chain model header mismatch".into(),
            ));
        }
        let mut labels = BTreeSet::new();
        let mut feats = FeatureTable::default();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let kind = parts.next().unwrap();
            let (a, b) = match (parts.next(), parts.next()) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(ModelError::MalformedModel(format!(
                        "bad model line {line:?}"
                    )))
                }
            };
            match kind {
                "label" => {
                    let tag = MorphTag::parse(a).map_err(|e| {
                        ModelError::MalformedModel(format!("bad label tag {a:?}: {e}"))
                    })?;
                    let tree = EditTree::parse(b).ok_or_else(|| {
                        ModelError::MalformedModel(format!("bad edit tree {b:?}"))
                    })?;
                    labels.insert(JointLabel { tag, tree });
                }
                "feat" => {
                    let name = edit_tree::unescape_text(a).ok_or_else(|| {
                        ModelError::MalformedModel(format!("bad feature name {a:?}"))
                    })?;
                    let weight: f64 = b.parse().map_err(|_| {
                        ModelError::MalformedModel(format!("bad feature weight {b:?}"))
                    })?;
                    let id = feats.intern(&name);
                    feats.weights[id] = weight;
                }
                _ => {
                    return Err(ModelError::MalformedModel(format!(
                        "unknown model line {line:?}"
                    )))
                }
            }
        }
        if labels.is_empty() {
            return Err(ModelError::MalformedModel(
                "chain model has no labels".into(),
            ));
        }
        let tags: BTreeSet<MorphTag> = labels.iter().map(|l| l.tag.clone()).collect();
        Ok(CrfModel {
            labels: labels.into_iter().collect(),
            tags: tags.into_iter().collect(),
            feats,
        })
    }
}

/// Per-tag log-sum-exp of candidate emission scores. Every tag has at
/// least one candidate (the identity tree), so entries are finite.
fn group_logsumexp(groups: &[Vec<usize>], scores: &[f64]) -> Vec<f64> {
    groups
        .iter()
        .map(|g| {
            let vals: Vec<f64> = g.iter().map(|&c| scores[c]).collect();
            logsumexp(&vals)
        })
        .collect()
}

/// Forward recursion over tag states in log space. `trans[p + 1][t]` is
/// the previous-tag-to-`t` weight, row 0 the sentence start. Returns the
/// forward lattice (each entry includes its own position's emission mass)
/// and the log partition.
fn forward(lse_emis: &[Vec<f64>], trans: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let n = lse_emis.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let n_tags = lse_emis[0].len();
    let mut alpha = Vec::with_capacity(n);
    let first: Vec<f64> = (0..n_tags).map(|t| trans[0][t] + lse_emis[0][t]).collect();
    alpha.push(first);
    for i in 1..n {
        let prev = &alpha[i - 1];
        let row: Vec<f64> = (0..n_tags)
            .map(|t| {
                let ins: Vec<f64> = (0..n_tags).map(|p| prev[p] + trans[p + 1][t]).collect();
                logsumexp(&ins) + lse_emis[i][t]
            })
            .collect();
        alpha.push(row);
    }
    let logz = logsumexp(&alpha[n - 1]);
    (alpha, logz)
}

/// Backward recursion companion to [`forward`].
fn backward(lse_emis: &[Vec<f64>], trans: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = lse_emis.len();
    if n == 0 {
        return Vec::new();
    }
    let n_tags = lse_emis[0].len();
    let mut beta = vec![vec![0.0; n_tags]; n];
    for i in (0..n - 1).rev() {
        for t in 0..n_tags {
            let outs: Vec<f64> = (0..n_tags)
                .map(|s| trans[t + 1][s] + lse_emis[i + 1][s] + beta[i + 1][s])
                .collect();
            beta[i][t] = logsumexp(&outs);
        }
    }
    beta
}

/// Cached exact inference state for one sentence: candidate labels with
/// emission scores, the transition matrix, and the forward lattice.
#[derive(Debug)]
pub struct ChainPosterior<'m> {
    model: &'m CrfModel,
    forms: Vec<String>,
    /// Label ids per position.
    cands: Vec<Vec<usize>>,
    /// Emission scores aligned with `cands`.
    emis: Vec<Vec<f64>>,
    /// Candidate indices grouped by tag id, per position.
    by_tag: Vec<Vec<Vec<usize>>>,
    lse_emis: Vec<Vec<f64>>,
    trans: Vec<Vec<f64>>,
    alpha: Vec<Vec<f64>>,
    logz: f64,
}

impl ChainPosterior<'_> {
    pub fn logz(&self) -> f64 {
        self.logz
    }

    /// Candidate label ids at one position.
    pub fn candidates(&self, position: usize) -> &[usize] {
        &self.cands[position]
    }

    /// Viterbi path as label ids plus its score. Ties break toward the
    /// lower label index (within a tag) and the lower tag index (between
    /// tags).
    fn viterbi(&self) -> (Vec<usize>, f64) {
        let n = self.forms.len();
        if n == 0 {
            return (Vec::new(), 0.0);
        }
        let n_tags = self.model.tags.len();
        // Best candidate within each (position, tag); candidates are in
        // ascending label order, so first-strictly-greater keeps the
        // lowest label index on ties.
        let mut best_cand = vec![vec![(f64::NEG_INFINITY, usize::MAX); n_tags]; n];
        for i in 0..n {
            for t in 0..n_tags {
                for &c in &self.by_tag[i][t] {
                    if self.emis[i][c] > best_cand[i][t].0 {
                        best_cand[i][t] = (self.emis[i][c], c);
                    }
                }
            }
        }
        let mut delta = vec![vec![f64::NEG_INFINITY; n_tags]; n];
        let mut back = vec![vec![0usize; n_tags]; n];
        for t in 0..n_tags {
            delta[0][t] = self.trans[0][t] + best_cand[0][t].0;
        }
        for i in 1..n {
            for t in 0..n_tags {
                let mut best = (f64::NEG_INFINITY, 0);
                for p in 0..n_tags {
                    let v = delta[i - 1][p] + self.trans[p + 1][t];
                    if v > best.0 {
                        best = (v, p);
                    }
                }
                delta[i][t] = best.0 + best_cand[i][t].0;
                back[i][t] = best.1;
            }
        }
        let mut t = 0;
        for s in 1..n_tags {
            if delta[n - 1][s] > delta[n - 1][t] {
                t = s;
            }
        }
        let score = delta[n - 1][t];
        let mut tags = vec![0usize; n];
        tags[n - 1] = t;
        for i in (1..n).rev() {
            tags[i - 1] = back[i][tags[i]];
        }
        let path = (0..n)
            .map(|i| self.cands[i][best_cand[i][tags[i]].1])
            .collect();
        (path, score)
    }

    /// The argmax joint label sequence, realized as lemmata and tags.
    pub fn map(&self) -> MapDecode {
        let (path, score) = self.viterbi();
        let mut lemmata = Vec::with_capacity(path.len());
        let mut tags = Vec::with_capacity(path.len());
        for (i, &id) in path.iter().enumerate() {
            let label = self.model.label(id);
            lemmata.push(
                label
                    .tree
                    .apply(&self.forms[i])
                    .expect("candidates are applicable"),
            );
            tags.push(label.tag.clone());
        }
        MapDecode {
            lemmata,
            tags,
            score,
        }
    }

    /// Posterior marginals per position as (label id, probability) pairs
    /// aligned with [`ChainPosterior::candidates`]; each position sums
    /// to 1.
    pub fn marginals(&self) -> Vec<Vec<(usize, f64)>> {
        let n = self.forms.len();
        let beta = backward(&self.lse_emis, &self.trans);
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = Vec::with_capacity(self.cands[i].len());
            for (t, group) in self.by_tag[i].iter().enumerate() {
                let p_tag = (self.alpha[i][t] + beta[i][t] - self.logz).exp();
                for &c in group {
                    let p = p_tag * (self.emis[i][c] - self.lse_emis[i][t]).exp();
                    row.push((self.cands[i][c], p));
                }
            }
            row.sort_by_key(|&(id, _)| id);
            out.push(row);
        }
        out
    }

    /// One exact posterior sample: backward-sample the tag sequence from
    /// the forward lattice, then draw each edit tree from its conditional
    /// within the sampled tag.
    pub fn sample(&self, rng: &mut ChaCha20Rng) -> (Vec<String>, Vec<MorphTag>) {
        let n = self.forms.len();
        if n == 0 {
            return (Vec::new(), Vec::new());
        }
        let n_tags = self.model.tags.len();
        let mut tags = vec![0usize; n];
        tags[n - 1] = sample_log_weights(&self.alpha[n - 1], rng);
        for i in (0..n - 1).rev() {
            let next = tags[i + 1];
            let weights: Vec<f64> = (0..n_tags)
                .map(|t| self.alpha[i][t] + self.trans[t + 1][next])
                .collect();
            tags[i] = sample_log_weights(&weights, rng);
        }
        let mut lemmata = Vec::with_capacity(n);
        let mut out_tags = Vec::with_capacity(n);
        for i in 0..n {
            let group = &self.by_tag[i][tags[i]];
            let weights: Vec<f64> = group.iter().map(|&c| self.emis[i][c]).collect();
            let pick = group[sample_log_weights(&weights, rng)];
            let label = self.model.label(self.cands[i][pick]);
            lemmata.push(
                label
                    .tree
                    .apply(&self.forms[i])
                    .expect("candidates are applicable"),
            );
            out_tags.push(label.tag.clone());
        }
        (lemmata, out_tags)
    }
}

/// Draw an index proportional to exp(weights), stably shifted.
fn sample_log_weights(weights: &[f64], rng: &mut ChaCha20Rng) -> usize {
    let m = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let probs: Vec<f64> = weights.iter().map(|&w| (w - m).exp()).collect();
    sample_index(&probs, rng)
}

// ----- training ---------------------------------------------------------------

/// One prepared training sentence: interned feature ids per candidate,
/// tag groupings, and the gold path.
struct SentenceGraph {
    weight: f64,
    cand_tag: Vec<Vec<usize>>,
    cand_feats: Vec<Vec<Vec<usize>>>,
    by_tag: Vec<Vec<Vec<usize>>>,
    gold_cand: Vec<usize>,
    gold_tag: Vec<usize>,
}

struct Trainer {
    model: CrfModel,
    graphs: Vec<SentenceGraph>,
    /// Interned transition feature ids, [previous + 1][current].
    trans_ids: Vec<Vec<usize>>,
    total_weight: f64,
}

impl Trainer {
    fn new(data: &[(AnnotatedSentence, f64)], hyper: &CrfHyper) -> ModelResult<Trainer> {
        if !(hyper.step.is_finite() && hyper.step >= 0.0) {
            return Err(ModelError::Config(format!(
                "gradient step {} must be finite and nonnegative",
                hyper.step
            )));
        }
        if !(hyper.l2.is_finite() && hyper.l2 >= 0.0) {
            return Err(ModelError::Config(format!(
                "L2 strength {} must be finite and nonnegative",
                hyper.l2
            )));
        }
        let kept: Vec<&(AnnotatedSentence, f64)> =
            data.iter().filter(|(_, w)| *w != 0.0).collect();
        if kept.is_empty() {
            return Err(ModelError::Config(
                "chain model training needs at least one nonzero-weight sentence".into(),
            ));
        }
        for (_, w) in &kept {
            if !w.is_finite() || *w < 0.0 {
                return Err(ModelError::Config(format!("invalid sentence weight {w}")));
            }
        }

        // Label inventory: every observed (tag, extracted tree) pair plus
        // the identity tree with every observed tag.
        let mut label_set: BTreeSet<JointLabel> = BTreeSet::new();
        for (sentence, _) in &kept {
            for (form, lemma, tag) in sentence.tokens() {
                label_set.insert(JointLabel {
                    tag: tag.clone(),
                    tree: EditTree::extract(form, lemma),
                });
                label_set.insert(JointLabel {
                    tag: tag.clone(),
                    tree: EditTree::identity(),
                });
            }
        }
        let labels: Vec<JointLabel> = label_set.into_iter().collect();
        let tag_set: BTreeSet<MorphTag> = labels.iter().map(|l| l.tag.clone()).collect();
        let tags: Vec<MorphTag> = tag_set.into_iter().collect();
        let mut model = CrfModel {
            labels,
            tags,
            feats: FeatureTable::default(),
        };

        let n_tags = model.tags.len();
        let tag_list = model.tags.clone();
        let mut trans_ids = Vec::with_capacity(n_tags + 1);
        for prev in std::iter::once(None).chain(tag_list.iter().map(Some)) {
            trans_ids.push(
                tag_list
                    .iter()
                    .map(|t| model.feats.intern(&transition_feature(prev, t)))
                    .collect::<Vec<usize>>(),
            );
        }

        let mut graphs = Vec::with_capacity(kept.len());
        let mut total_weight = 0.0;
        for (sentence, weight) in &kept {
            total_weight += weight;
            let forms = sentence.forms();
            let n = forms.len();
            let mut cand_tag = Vec::with_capacity(n);
            let mut cand_feats = Vec::with_capacity(n);
            let mut by_tag = Vec::with_capacity(n);
            let mut gold_cand = Vec::with_capacity(n);
            let mut gold_tag = Vec::with_capacity(n);
            for (i, (form, lemma, tag)) in sentence.tokens().enumerate() {
                let gold_label = JointLabel {
                    tag: tag.clone(),
                    tree: EditTree::extract(form, lemma),
                };
                let mut tags_here = Vec::new();
                let mut feats_here = Vec::new();
                let mut groups = vec![Vec::new(); n_tags];
                let mut gold = None;
                for (id, label) in model.labels.iter().enumerate() {
                    if label.tree.apply(form).is_none() {
                        continue;
                    }
                    let t = model.tags.binary_search(&label.tag).expect("tag in inventory");
                    let ids: Vec<usize> = emission_features(forms, i, label)
                        .iter()
                        .map(|f| model.feats.intern(f))
                        .collect();
                    if model.labels[id] == gold_label {
                        gold = Some(tags_here.len());
                    }
                    groups[t].push(tags_here.len());
                    tags_here.push(t);
                    feats_here.push(ids);
                }
                let gold = gold.expect("the gold pair's own tree is always a candidate");
                gold_tag.push(tags_here[gold]);
                gold_cand.push(gold);
                cand_tag.push(tags_here);
                cand_feats.push(feats_here);
                by_tag.push(groups);
            }
            graphs.push(SentenceGraph {
                weight: *weight,
                cand_tag,
                cand_feats,
                by_tag,
                gold_cand,
                gold_tag,
            });
        }
        Ok(Trainer {
            model,
            graphs,
            trans_ids,
            total_weight,
        })
    }

    /// Objective (sum scale: weighted log-likelihood minus L2 penalty) and
    /// its exact gradient (observed minus expected features minus the
    /// regularizer pull), both at the current weights.
    fn objective_and_gradient(&self, l2: f64) -> (f64, Vec<f64>) {
        let w = &self.model.feats.weights;
        let n_tags = self.model.tags.len();
        let trans: Vec<Vec<f64>> = self
            .trans_ids
            .iter()
            .map(|row| row.iter().map(|&id| w[id]).collect())
            .collect();
        let mut grad = vec![0.0; w.len()];
        let mut obj = 0.0;
        for g in &self.graphs {
            let n = g.cand_tag.len();
            let emis: Vec<Vec<f64>> = g
                .cand_feats
                .iter()
                .map(|pos| {
                    pos.iter()
                        .map(|ids| ids.iter().map(|&f| w[f]).sum())
                        .collect()
                })
                .collect();
            let lse_emis: Vec<Vec<f64>> = (0..n)
                .map(|i| group_logsumexp(&g.by_tag[i], &emis[i]))
                .collect();
            let (alpha, logz) = forward(&lse_emis, &trans);
            let beta = backward(&lse_emis, &trans);

            // Observed score and features along the gold path.
            let mut gold_score = 0.0;
            let mut prev = 0usize;
            for i in 0..n {
                gold_score += emis[i][g.gold_cand[i]] + trans[prev][g.gold_tag[i]];
                for &f in &g.cand_feats[i][g.gold_cand[i]] {
                    grad[f] += g.weight;
                }
                grad[self.trans_ids[prev][g.gold_tag[i]]] += g.weight;
                prev = g.gold_tag[i] + 1;
            }
            obj += g.weight * (gold_score - logz);

            // Expected emission features.
            for i in 0..n {
                for t in 0..n_tags {
                    let p_tag = (alpha[i][t] + beta[i][t] - logz).exp();
                    if p_tag == 0.0 {
                        continue;
                    }
                    for &c in &g.by_tag[i][t] {
                        let p = p_tag * (emis[i][c] - lse_emis[i][t]).exp();
                        for &f in &g.cand_feats[i][c] {
                            grad[f] -= g.weight * p;
                        }
                    }
                }
            }
            // Expected transition features: sentence start, then pairs.
            for t in 0..n_tags {
                let p = (alpha[0][t] + beta[0][t] - logz).exp();
                grad[self.trans_ids[0][t]] -= g.weight * p;
            }
            for i in 1..n {
                for p_ in 0..n_tags {
                    for t in 0..n_tags {
                        let p = (alpha[i - 1][p_]
                            + trans[p_ + 1][t]
                            + lse_emis[i][t]
                            + beta[i][t]
                            - logz)
                            .exp();
                        grad[self.trans_ids[p_ + 1][t]] -= g.weight * p;
                    }
                }
            }
        }
        let penalty: f64 = w.iter().map(|v| v * v).sum::<f64>() * 0.5 * l2;
        obj -= penalty;
        for (gk, wk) in grad.iter_mut().zip(w.iter()) {
            *gk -= l2 * wk;
        }
        (obj, grad)
    }

    /// Fixed-step ascent on the weighted-mean objective (the sum-scale
    /// gradient divided by the total weight, so the step size is
    /// insensitive to corpus size).
    fn run(mut self, hyper: &CrfHyper) -> (CrfModel, CrfTrainReport) {
        for _ in 0..hyper.steps {
            let (_, grad) = self.objective_and_gradient(hyper.l2);
            for (wk, gk) in self.model.feats.weights.iter_mut().zip(&grad) {
                *wk += hyper.step * gk / self.total_weight;
            }
        }
        let (final_objective, _) = self.objective_and_gradient(hyper.l2);
        let penalty: f64 =
            self.model.feats.weights.iter().map(|v| v * v).sum::<f64>() * 0.5 * hyper.l2;
        let final_loglik = final_objective + penalty;
        (
            self.model,
            CrfTrainReport {
                final_objective,
                final_loglik,
            },
        )
    }
}
