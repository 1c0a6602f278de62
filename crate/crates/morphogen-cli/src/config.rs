//! Experiment configuration: TOML file, command-line overrides, validation
//! with field-by-field messages, and a content fingerprint.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use morphogen::crf::CrfHyper;
use morphogen::inflector::InflectorHyper;
use morphogen::lemmagen::LemmaGenHyper;
use morphogen::num::CellKind;
use morphogen::taglm::TagLmHyper;
use morphogen::wakesleep::WakeSleepConfig;

use crate::CliError;

/// Which trainer a run uses: the supervised baseline (generative factors
/// on labeled data only) or the full alternating loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Nn,
    Svae,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Mode, CliError> {
        match s {
            "nn" => Ok(Mode::Nn),
            "svae" => Ok(Mode::Svae),
            other => Err(CliError::Usage(format!(
                "mode must be \"nn\" or \"svae\", got \"{other}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// "synth" generates the built-in synthetic language; "conllu" reads
    /// annotated sentences from `train_path`.
    pub source: String,
    /// Token budget for the labeled portion. With a conllu source the
    /// labeled portion is the minimal whole-sentence prefix reaching this
    /// budget and the remainder becomes unlabeled text; with the synthetic
    /// source both portions are generated directly.
    pub labeled_tokens: usize,
    /// Unlabeled token budget (synthetic source only; a conllu source
    /// takes the whole remainder of the file).
    pub unlabeled_tokens: usize,
    /// Annotated training sentences (conllu source only). Relative paths
    /// resolve against MORPHOGEN_DATA_DIR when that is set.
    pub train_path: Option<String>,
    /// Annotated sentences compiled into the evaluation lexicon (conllu
    /// source only).
    pub eval_path: Option<String>,
    /// Evaluation lexicon size (synthetic source only): that many distinct
    /// types, in first-seen order, from a held-out stream.
    pub eval_types: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: "synth".into(),
            labeled_tokens: 500,
            unlabeled_tokens: 2000,
            train_path: None,
            eval_path: None,
            eval_types: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub iterations: usize,
    /// Dreams per sleep phase; omitted picks a quarter of the labeled
    /// sentence count, rounded up.
    pub dream_count: Option<usize>,
    pub gamma_sleep: f64,
    pub gamma_wake: f64,
    pub dream_temperature: f64,
    pub max_dream_tags: usize,
    pub max_dream_lemma: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let ws = WakeSleepConfig::default();
        TrainingConfig {
            iterations: ws.iterations,
            dream_count: ws.dream_count,
            gamma_sleep: ws.gamma_sleep,
            gamma_wake: ws.gamma_wake,
            dream_temperature: ws.dream_temperature,
            max_dream_tags: ws.max_dream_tags,
            max_dream_lemma: ws.max_dream_lemma,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TagLmConfig {
    pub embed: usize,
    pub hidden: usize,
    pub layers: usize,
    pub epochs: usize,
    pub lr: f64,
    pub dropout: f64,
    pub clip: f64,
    pub max_sample_len: usize,
}

impl Default for TagLmConfig {
    fn default() -> Self {
        let h = TagLmHyper::default();
        TagLmConfig {
            embed: h.embed,
            hidden: h.hidden,
            layers: h.layers,
            epochs: h.epochs,
            lr: h.lr,
            dropout: h.dropout,
            clip: h.clip,
            max_sample_len: h.max_sample_len,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LemmaGenConfig {
    pub char_embed: usize,
    pub pos_embed: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip: f64,
    pub temperature: f64,
    pub max_sample_len: usize,
    pub unk_pos_rate: f64,
}

impl Default for LemmaGenConfig {
    fn default() -> Self {
        let h = LemmaGenHyper::default();
        LemmaGenConfig {
            char_embed: h.char_embed,
            pos_embed: h.pos_embed,
            hidden: h.hidden,
            epochs: h.epochs,
            lr: h.lr,
            weight_decay: h.weight_decay,
            clip: h.clip,
            temperature: h.temperature,
            max_sample_len: h.max_sample_len,
            unk_pos_rate: h.unk_pos_rate,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InflectorConfig {
    pub embed: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    /// "gru" or "lstm".
    pub cell: String,
    pub epochs: usize,
    pub dropout: f64,
    pub rho: f64,
    pub eps: f64,
    pub beam: usize,
}

impl Default for InflectorConfig {
    fn default() -> Self {
        let h = InflectorHyper::default();
        InflectorConfig {
            embed: h.embed,
            enc_hidden: h.enc_hidden,
            dec_hidden: h.dec_hidden,
            cell: h.cell.name().to_string(),
            epochs: h.epochs,
            dropout: h.dropout,
            rho: h.rho,
            eps: h.eps,
            beam: h.beam,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrfConfig {
    pub step: f64,
    pub steps: usize,
    pub l2: f64,
}

impl Default for CrfConfig {
    fn default() -> Self {
        let h = CrfHyper::default();
        CrfConfig {
            step: h.step,
            steps: h.steps,
            l2: h.l2,
        }
    }
}

/// The whole experiment: data, trainer choice, every model's
/// hyperparameters, seed, and artifact directory. Every field has a
/// default, so an empty TOML file is a valid configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mode: Mode,
    /// Artifact directory (models, reports, checkpoints, logs). Relative
    /// to the working directory; not part of the fingerprint.
    pub out_dir: String,
    pub data: DataConfig,
    pub training: TrainingConfig,
    pub taglm: TagLmConfig,
    pub lemmagen: LemmaGenConfig,
    pub inflector: InflectorConfig,
    pub crf: CrfConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            mode: Mode::Svae,
            out_dir: "run".into(),
            data: DataConfig::default(),
            training: TrainingConfig::default(),
            taglm: TagLmConfig::default(),
            lemmagen: LemmaGenConfig::default(),
            inflector: InflectorConfig::default(),
            crf: CrfConfig::default(),
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    /// Overrides `data.labeled_tokens`.
    pub tokens: Option<usize>,
}

impl ExperimentConfig {
    /// Read a TOML file and apply command-line overrides. Unknown fields
    /// and type errors are reported with serde's field-naming messages.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(mode) = overrides.mode {
            config.mode = mode;
        }
        if let Some(tokens) = overrides.tokens {
            config.data.labeled_tokens = tokens;
        }
        Ok(config)
    }

    /// Check every field against its documented domain. All failures are
    /// reported together, each naming its config field.
    pub fn validate(&self, eval_lexicon_needed: bool) -> Result<(), CliError> {
        let mut problems: Vec<String> = Vec::new();
        match self.data.source.as_str() {
            "synth" => {
                if self.data.train_path.is_some() {
                    problems
                        .push("data.train_path: only meaningful when data.source = \"conllu\"".into());
                }
                if self.data.eval_path.is_some() {
                    problems
                        .push("data.eval_path: only meaningful when data.source = \"conllu\"".into());
                }
                if self.data.eval_types == 0 {
                    problems.push("data.eval_types: must be at least 1".into());
                }
            }
            "conllu" => {
                if self.data.train_path.is_none() {
                    problems.push("data.train_path: required when data.source = \"conllu\"".into());
                }
                if eval_lexicon_needed && self.data.eval_path.is_none() {
                    problems.push("data.eval_path: required to evaluate a conllu experiment".into());
                }
            }
            other => problems.push(format!("data.source: must be \"synth\" or \"conllu\", got \"{other}\"")),
        }
        if self.data.labeled_tokens == 0 {
            problems.push("data.labeled_tokens: must be at least 1".into());
        }
        if self.training.iterations == 0 {
            problems.push("training.iterations: must be at least 1".into());
        }
        for (name, g) in [
            ("training.gamma_sleep", self.training.gamma_sleep),
            ("training.gamma_wake", self.training.gamma_wake),
        ] {
            if !(g.is_finite() && g >= 0.0) {
                problems.push(format!("{name}: must be finite and nonnegative, got {g}"));
            }
        }
        if !(self.training.dream_temperature.is_finite() && self.training.dream_temperature > 0.0) {
            problems.push(format!(
                "training.dream_temperature: must be finite and positive, got {}",
                self.training.dream_temperature
            ));
        }
        if self.training.max_dream_tags == 0 {
            problems.push("training.max_dream_tags: must be at least 1".into());
        }
        if self.training.max_dream_lemma == 0 {
            problems.push("training.max_dream_lemma: must be at least 1".into());
        }
        if CellKind::parse(&self.inflector.cell).is_none() {
            problems.push(format!(
                "inflector.cell: must be \"gru\" or \"lstm\", got \"{}\"",
                self.inflector.cell
            ));
        }
        if self.inflector.beam == 0 {
            problems.push("inflector.beam: must be at least 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Usage(format!(
                "invalid configuration: {}",
                problems.join("; ")
            )))
        }
    }

    /// The loop configuration with all model hyperparameters filled in.
    /// Call after [`ExperimentConfig::validate`].
    pub fn wakesleep(&self) -> WakeSleepConfig {
        WakeSleepConfig {
            iterations: self.training.iterations,
            dream_count: self.training.dream_count,
            gamma_sleep: self.training.gamma_sleep,
            gamma_wake: self.training.gamma_wake,
            dream_temperature: self.training.dream_temperature,
            max_dream_tags: self.training.max_dream_tags,
            max_dream_lemma: self.training.max_dream_lemma,
            taglm: TagLmHyper {
                embed: self.taglm.embed,
                hidden: self.taglm.hidden,
                layers: self.taglm.layers,
                epochs: self.taglm.epochs,
                lr: self.taglm.lr,
                dropout: self.taglm.dropout,
                clip: self.taglm.clip,
                max_sample_len: self.taglm.max_sample_len,
            },
            lemmagen: LemmaGenHyper {
                char_embed: self.lemmagen.char_embed,
                pos_embed: self.lemmagen.pos_embed,
                hidden: self.lemmagen.hidden,
                epochs: self.lemmagen.epochs,
                lr: self.lemmagen.lr,
                weight_decay: self.lemmagen.weight_decay,
                clip: self.lemmagen.clip,
                temperature: self.lemmagen.temperature,
                max_sample_len: self.lemmagen.max_sample_len,
                unk_pos_rate: self.lemmagen.unk_pos_rate,
            },
            inflector: InflectorHyper {
                embed: self.inflector.embed,
                enc_hidden: self.inflector.enc_hidden,
                dec_hidden: self.inflector.dec_hidden,
                cell: CellKind::parse(&self.inflector.cell).expect("validated"),
                epochs: self.inflector.epochs,
                dropout: self.inflector.dropout,
                rho: self.inflector.rho,
                eps: self.inflector.eps,
                beam: self.inflector.beam,
            },
            crf: CrfHyper {
                step: self.crf.step,
                steps: self.crf.steps,
                l2: self.crf.l2,
            },
            seed: self.seed,
        }
    }

    /// Canonical serialization of the resolved configuration. Every
    /// semantic field participates in a fixed order; `out_dir` (a pure
    /// artifact location) is excluded.
    pub fn canonical(&self) -> String {
        let mut semantic = self.clone();
        semantic.out_dir = String::new();
        toml::to_string(&semantic).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical serialization: changes exactly when a
    /// semantic field changes.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.out_dir)
    }
}

/// Resolve a data path from the config: absolute paths pass through,
/// relative ones resolve against MORPHOGEN_DATA_DIR when that is set and
/// the working directory otherwise.
pub fn resolve_data_path(p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os("MORPHOGEN_DATA_DIR") {
        Some(root) => Path::new(&root).join(path),
        None => path.to_path_buf(),
    }
}
