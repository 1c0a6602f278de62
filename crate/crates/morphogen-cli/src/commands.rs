//! The five commands: train, inflect, dream, evaluate, tag.

use std::path::{Path, PathBuf};

use morphogen::crf::CrfModel;
use morphogen::data::{
    compile_type_lexicon, parse_conllu, split_tokens, Corpus, MorphTag, TypeLexicon,
};
use morphogen::eval::{evaluate_type_accuracy, records_tsv};
use morphogen::inflector::{DecodeMode, Inflector, InflectorHyper};
use morphogen::lemmagen::LemmaGenHyper;
use morphogen::num::derive_rng;
use morphogen::synth::SynthLanguage;
use morphogen::taglm::TagLmHyper;
use morphogen::wakesleep::{run_wake_sleep, train_supervised, GenerativeModel};
use morphogen::ModelError;

use crate::config::{resolve_data_path, ExperimentConfig, Mode};
use crate::CliError;

/// Classify a library error: data and I/O problems are data errors,
/// configuration problems are usage errors, everything else (numerics,
/// malformed model files, degenerate models) is a model error.
fn from_model(e: ModelError) -> CliError {
    match e {
        ModelError::Data(d) => CliError::Data(d.to_string()),
        ModelError::Io(i) => CliError::Data(i.to_string()),
        ModelError::Config(c) => CliError::Usage(format!("invalid configuration: {c}")),
        other => CliError::Model(other.to_string()),
    }
}

/// Anything that goes wrong while loading from a model directory is a
/// model error, including missing files.
fn load_err(what: &str, dir: &Path, e: ModelError) -> CliError {
    CliError::Model(format!("failed to load {what} from {}: {e}", dir.display()))
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Data(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, content).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Read and split the configured training data.
fn build_corpus(config: &ExperimentConfig) -> Result<Corpus, CliError> {
    match config.data.source.as_str() {
        "synth" => Ok(SynthLanguage::standard().corpus(
            config.data.labeled_tokens,
            config.data.unlabeled_tokens,
            config.seed,
        )),
        "conllu" => {
            let field = config.data.train_path.as_ref().expect("validated");
            let path = resolve_data_path(field);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Data(format!("data.train_path: {}: {e}", path.display())))?;
            let sentences = parse_conllu(&text)
                .map_err(|e| CliError::Data(format!("data.train_path: {}: {e}", path.display())))?;
            let split = split_tokens(sentences, config.data.labeled_tokens)
                .map_err(|e| CliError::Data(format!("data.train_path: {e}")))?;
            if split.shortfall {
                eprintln!(
                    "warning: data.train_path holds only {} tokens, fewer than the {} budgeted; everything is labeled",
                    split.labeled_tokens, config.data.labeled_tokens
                );
            }
            Ok(split.corpus)
        }
        other => Err(CliError::Usage(format!(
            "data.source: must be \"synth\" or \"conllu\", got \"{other}\""
        ))),
    }
}

/// Train per the configuration and write the model bundle, the resolved
/// configuration, and its fingerprint under the output directory. The
/// alternating loop additionally writes per-phase checkpoints and a run
/// log.
pub fn cmd_train(config: &ExperimentConfig) -> Result<(), CliError> {
    config.validate(false)?;
    let corpus = build_corpus(config)?;
    let ws = config.wakesleep();
    let out = config.out_dir();
    let model_dir = out.join("model");
    std::fs::create_dir_all(&model_dir)
        .map_err(|e| CliError::Data(format!("{}: {e}", model_dir.display())))?;
    match config.mode {
        Mode::Nn => {
            let (p, report) = train_supervised(&corpus.labeled, &ws).map_err(from_model)?;
            p.save(&model_dir).map_err(from_model)?;
            println!("factors trained; combined final loss {}", report.combined_loss());
        }
        Mode::Svae => {
            let checkpoints = out.join("checkpoints");
            let run = run_wake_sleep(&corpus, &ws, Some(&checkpoints)).map_err(from_model)?;
            run.p.save(&model_dir).map_err(from_model)?;
            run.q.save(&model_dir).map_err(from_model)?;
            for record in &run.log {
                println!("{record}");
            }
        }
    }
    write_file(
        &out.join("config.toml"),
        &toml::to_string(config).expect("config serializes"),
    )?;
    write_file(&out.join("fingerprint"), &format!("{}\n", config.fingerprint()))?;
    println!("model written to {}", model_dir.display());
    Ok(())
}

/// Decode one (lemma, tag) pair with the saved inflector and print the
/// form.
pub fn cmd_inflect(
    model_dir: &Path,
    lemma: &str,
    tag_text: &str,
    beam: usize,
) -> Result<(), CliError> {
    if beam == 0 {
        return Err(CliError::Usage("--beam must be at least 1".into()));
    }
    let tag = MorphTag::parse(tag_text).map_err(|e| CliError::Data(e.to_string()))?;
    let inflector = Inflector::load(model_dir, InflectorHyper::default())
        .map_err(|e| load_err("the inflector", model_dir, e))?;
    let decoded = inflector.decode(lemma, &tag, DecodeMode::Beam(beam));
    println!("{}", decoded.form);
    Ok(())
}

/// Dream `count` sentences from a saved generative bundle: form sequences
/// on standard output, one sentence per line, plus a companion file with
/// one row per sentence holding the space-joined forms, lemmata, and tags
/// in three tab-separated columns.
pub fn cmd_dream(
    model_dir: &Path,
    count: usize,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let p = GenerativeModel::load(
        model_dir,
        TagLmHyper::default(),
        LemmaGenHyper::default(),
        InflectorHyper::default(),
    )
    .map_err(|e| load_err("the generative bundle", model_dir, e))?;
    let mut lines = String::new();
    let mut companion = String::new();
    for k in 0..count {
        let mut rng = derive_rng(seed, &format!("dream/{k}"));
        let s = p.joint_sample(0.75, 30, 40, &mut rng).map_err(from_model)?;
        lines.push_str(&s.forms().join(" "));
        lines.push('\n');
        companion.push_str(&format!(
            "{}\t{}\t{}\n",
            s.forms().join(" "),
            s.lemmata().join(" "),
            s.tags()
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        ));
    }
    write_file(out, &companion)?;
    print!("{lines}");
    Ok(())
}

/// The evaluation lexicon and the reference lexicon of labeled training
/// types (for the seen/unseen breakdown), per the configuration.
fn build_eval_data(config: &ExperimentConfig) -> Result<(TypeLexicon, TypeLexicon), CliError> {
    match config.data.source.as_str() {
        "synth" => {
            let lang = SynthLanguage::standard();
            let mut lexicon = TypeLexicon::new();
            for e in lang.heldout_types(config.data.eval_types, config.seed) {
                lexicon.insert(e);
            }
            let labeled = lang
                .corpus(config.data.labeled_tokens, 0, config.seed)
                .labeled;
            Ok((lexicon, compile_type_lexicon(&labeled)))
        }
        "conllu" => {
            let field = config.data.eval_path.as_ref().expect("validated");
            let path = resolve_data_path(field);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Data(format!("data.eval_path: {}: {e}", path.display())))?;
            let sentences = parse_conllu(&text)
                .map_err(|e| CliError::Data(format!("data.eval_path: {}: {e}", path.display())))?;
            let lexicon = compile_type_lexicon(&sentences);
            let corpus = build_corpus(config)?;
            Ok((lexicon, compile_type_lexicon(&corpus.labeled)))
        }
        other => Err(CliError::Usage(format!(
            "data.source: must be \"synth\" or \"conllu\", got \"{other}\""
        ))),
    }
}

/// Evaluate a saved inflector over the configured lexicon: write the
/// report and the per-type decode dump under the output directory and
/// print the accuracy.
pub fn cmd_evaluate(
    config: &ExperimentConfig,
    model_override: Option<&Path>,
) -> Result<(), CliError> {
    config.validate(true)?;
    let out = config.out_dir();
    let default_dir = out.join("model");
    let model_dir: &Path = model_override.unwrap_or(&default_dir);
    let inflector = Inflector::load(model_dir, InflectorHyper::default())
        .map_err(|e| load_err("the inflector", model_dir, e))?;
    let (lexicon, reference) = build_eval_data(config)?;
    let fingerprint = config.fingerprint();
    let (report, records) = evaluate_type_accuracy(
        &inflector,
        &lexicon,
        DecodeMode::Beam(config.inflector.beam),
        Some(&reference),
        &fingerprint,
    )
    .map_err(from_model)?;
    write_file(&out.join("report.txt"), &report.to_text())?;
    write_file(&out.join("decode_dump.tsv"), &records_tsv(&records))?;
    println!(
        "accuracy {}/{} = {}",
        report.total.correct,
        report.total.total,
        report.accuracy()
    );
    Ok(())
}

/// Annotate the forms of a CoNLL-U file with the inference network's
/// best lemmata and tags: one `form<TAB>lemma<TAB>tag` line per token,
/// a blank line after each sentence. Only the form column of the input is
/// used.
pub fn cmd_tag(
    model_dir: &Path,
    input: &Path,
    out: Option<&PathBuf>,
) -> Result<(), CliError> {
    let q = CrfModel::load(model_dir).map_err(|e| load_err("the inference network", model_dir, e))?;
    let text = std::fs::read_to_string(input)
        .map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
    let sentences =
        parse_conllu(&text).map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
    let mut output = String::new();
    for s in &sentences {
        let decode = q
            .map_decode(&s.forms().to_vec())
            .map_err(from_model)?;
        for ((form, lemma), tag) in s.forms().iter().zip(&decode.lemmata).zip(&decode.tags) {
            output.push_str(&format!("{form}\t{lemma}\t{tag}\n"));
        }
        output.push('\n');
    }
    match out {
        Some(path) => write_file(path, &output)?,
        None => print!("{output}"),
    }
    Ok(())
}
