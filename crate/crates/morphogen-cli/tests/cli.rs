//! End-to-end tests of the binary: each spawns the compiled executable
//! and checks exit codes, streams, and artifacts.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_morphogen"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary spawns")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

/// A tiny annotated file: five tokens over five types with shared
/// suffix patterns, enough for the inflector to memorize.
const TOY_CONLLU: &str = "\
1\ttalked\ttalk\tv\t_\ttns=pst\t_\t_\t_\t_
2\tdogs\tdog\tn\t_\tnum=pl\t_\t_\t_\t_

1\twalked\twalk\tv\t_\ttns=pst\t_\t_\t_\t_
2\tcats\tcat\tn\t_\tnum=pl\t_\t_\t_\t_

1\ttalks\ttalk\tv\t_\ttns=prs\t_\t_\t_\t_
";

/// Supervised-baseline configuration over the toy file, sized to
/// memorize its five types quickly.
fn toy_config(out_dir: &str) -> String {
    format!(
        r#"seed = 7
mode = "nn"
out_dir = "{out_dir}"

[data]
source = "conllu"
labeled_tokens = 100
train_path = "train.conllu"

[taglm]
embed = 8
hidden = 8
epochs = 10

[lemmagen]
char_embed = 6
pos_embed = 4
hidden = 10
epochs = 40

[inflector]
embed = 14
enc_hidden = 10
dec_hidden = 10
epochs = 400
beam = 3

[crf]
steps = 10
"#
    )
}

/// Small synthetic-language configuration; `mode` and `seed` vary by test.
fn synth_config(out_dir: &str, mode: &str, seed: u64) -> String {
    format!(
        r#"seed = {seed}
mode = "{mode}"
out_dir = "{out_dir}"

[data]
source = "synth"
labeled_tokens = 40
unlabeled_tokens = 80
eval_types = 12

[training]
iterations = 1

[taglm]
embed = 8
hidden = 8
epochs = 15

[lemmagen]
char_embed = 4
pos_embed = 4
hidden = 8
epochs = 30

[inflector]
embed = 12
enc_hidden = 8
dec_hidden = 8
epochs = 40
beam = 3

[crf]
steps = 30
"#
    )
}

#[test]
fn bad_invocations_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let none = run_in(dir.path(), &[]);
    assert_eq!(code(&none), 1);

    let unknown = run_in(dir.path(), &["frobnicate"]);
    assert_eq!(code(&unknown), 1);

    let help = run_in(dir.path(), &["--help"]);
    assert_eq!(code(&help), 0);
    assert!(stdout(&help).contains("morphogen"));

    std::fs::write(dir.path().join("c.toml"), synth_config("out", "nn", 1)).unwrap();
    let bad_mode = run_in(
        dir.path(),
        &["train", "--config", "c.toml", "--mode", "vae"],
    );
    assert_eq!(code(&bad_mode), 1);
    assert!(stderr(&bad_mode).contains("nn"));

    let no_config = run_in(dir.path(), &["train", "--config", "missing.toml"]);
    assert_eq!(code(&no_config), 1);
}

#[test]
fn config_problems_name_their_fields() {
    let dir = tempfile::tempdir().unwrap();
    // A conllu source without a train_path is a configuration error.
    let bad = r#"
mode = "nn"
[data]
source = "conllu"
"#;
    std::fs::write(dir.path().join("bad.toml"), bad).unwrap();
    let out = run_in(dir.path(), &["train", "--config", "bad.toml"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("data.train_path"), "{}", stderr(&out));

    // A train_path pointing at a missing file is a data error.
    let missing = r#"
mode = "nn"
[data]
source = "conllu"
train_path = "nowhere.conllu"
"#;
    std::fs::write(dir.path().join("missing.toml"), missing).unwrap();
    let out = run_in(dir.path(), &["train", "--config", "missing.toml"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nowhere.conllu"), "{}", stderr(&out));
}

#[test]
fn train_memorizes_the_toy_paradigm_and_inflects_it() {
    let dir = tempfile::tempdir().unwrap();
    // The training file sits in a subdirectory found via the data-root
    // environment variable.
    let data = dir.path().join("data");
    std::fs::create_dir(&data).unwrap();
    std::fs::write(data.join("train.conllu"), TOY_CONLLU).unwrap();
    std::fs::write(dir.path().join("toy.toml"), toy_config("out")).unwrap();

    let train = bin()
        .current_dir(dir.path())
        .env("MORPHOGEN_DATA_DIR", &data)
        .args(["train", "--config", "toy.toml"])
        .output()
        .unwrap();
    assert_eq!(code(&train), 0, "{}", stderr(&train));
    // Five tokens cannot fill a 100-token budget.
    assert!(stderr(&train).contains("warning"), "{}", stderr(&train));
    assert!(dir.path().join("out/model/inflector.params").is_file());
    assert!(dir.path().join("out/config.toml").is_file());
    let fingerprint = std::fs::read_to_string(dir.path().join("out/fingerprint")).unwrap();
    assert_eq!(fingerprint.trim().len(), 64);

    let inflect = run_in(
        dir.path(),
        &["inflect", "--model", "out/model", "talk", "v;tns=pst"],
    );
    assert_eq!(code(&inflect), 0, "{}", stderr(&inflect));
    assert_eq!(stdout(&inflect), "talked\n");

    // A malformed tag is a data error; a missing model is a model error;
    // a zero beam is a usage error.
    let bad_tag = run_in(
        dir.path(),
        &["inflect", "--model", "out/model", "talk", "v;tns"],
    );
    assert_eq!(code(&bad_tag), 2, "{}", stderr(&bad_tag));

    let no_model = run_in(
        dir.path(),
        &["inflect", "--model", "absent", "talk", "v;tns=pst"],
    );
    assert_eq!(code(&no_model), 3, "{}", stderr(&no_model));

    let zero_beam = run_in(
        dir.path(),
        &["inflect", "--model", "out/model", "--beam", "0", "talk", "v;tns=pst"],
    );
    assert_eq!(code(&zero_beam), 1, "{}", stderr(&zero_beam));
}

#[test]
fn dreams_are_reproducible_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), synth_config("out", "nn", 3)).unwrap();
    let train = run_in(dir.path(), &["train", "--config", "c.toml"]);
    assert_eq!(code(&train), 0, "{}", stderr(&train));

    // Zero dreams: empty standard output, empty companion, success.
    let none = run_in(
        dir.path(),
        &["dream", "--model", "out/model", "--count", "0", "--out", "none.tsv"],
    );
    assert_eq!(code(&none), 0, "{}", stderr(&none));
    assert_eq!(stdout(&none), "");
    assert_eq!(std::fs::read_to_string(dir.path().join("none.tsv")).unwrap(), "");

    let dream = |seed: &str, out: &str| {
        run_in(
            dir.path(),
            &["dream", "--model", "out/model", "--count", "4", "--seed", seed, "--out", out],
        )
    };
    let a1 = dream("1", "a1.tsv");
    let a2 = dream("1", "a2.tsv");
    let b = dream("2", "b.tsv");
    assert_eq!(code(&a1), 0, "{}", stderr(&a1));
    assert_eq!(stdout(&a1), stdout(&a2), "same seed must reproduce");
    assert_ne!(stdout(&a1), stdout(&b), "different seeds must diverge");
    assert_eq!(stdout(&a1).lines().count(), 4);

    // Companion rows: three tab-separated columns whose first column is the
    // printed form sequence, with matching token counts across columns.
    let companion = std::fs::read_to_string(dir.path().join("a1.tsv")).unwrap();
    let rows: Vec<&str> = companion.lines().collect();
    assert_eq!(rows.len(), 4);
    for (row, printed) in rows.iter().zip(stdout(&a1).lines()) {
        let cols: Vec<&str> = row.split('\t').collect();
        assert_eq!(cols.len(), 3, "{row}");
        assert_eq!(cols[0], printed);
        let n = cols[0].split(' ').count();
        assert_eq!(cols[1].split(' ').count(), n);
        assert_eq!(cols[2].split(' ').count(), n);
    }
}

#[test]
fn alternating_loop_trains_tags_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), synth_config("out", "svae", 11)).unwrap();
    let train = run_in(dir.path(), &["train", "--config", "c.toml"]);
    assert_eq!(code(&train), 0, "{}", stderr(&train));

    // One round leaves one sleep and one wake record in the run log, and
    // per-phase checkpoints on disk.
    let log = std::fs::read_to_string(dir.path().join("out/checkpoints/run.log")).unwrap();
    assert_eq!(log.lines().count(), 2, "{log}");
    assert!(log.lines().next().unwrap().contains("sleep"));
    assert!(dir.path().join("out/checkpoints/iter1/wake/inflector.params").is_file());
    assert!(dir.path().join("out/model/crf.model").is_file());

    // Annotate raw text: one form<TAB>lemma<TAB>tag line per token and a
    // blank line after each sentence. Gold lemma and tag columns of the
    // input are ignored, so placeholders do.
    let input = "\
1\tpata\t_\tx\t_\t_\t_\t_\t_\t_
2\tsonawe\t_\tx\t_\t_\t_\t_\t_\t_

1\tkimuye\t_\tx\t_\t_\t_\t_\t_\t_
";
    std::fs::write(dir.path().join("in.conllu"), input).unwrap();
    let tag = run_in(
        dir.path(),
        &["tag", "--model", "out/model", "--input", "in.conllu"],
    );
    assert_eq!(code(&tag), 0, "{}", stderr(&tag));
    let text = stdout(&tag);
    let lines: Vec<&str> = text.split('\n').collect();
    assert_eq!(lines.len(), 6, "{text:?}"); // 2 tokens, blank, 1 token, blank, trailing
    assert_eq!(lines[0].split('\t').count(), 3);
    assert!(lines[0].starts_with("pata\t"));
    assert_eq!(lines[2], "");
    assert!(lines[3].starts_with("kimuye\t"));

    // Tagging into a file matches standard output semantics.
    let to_file = run_in(
        dir.path(),
        &["tag", "--model", "out/model", "--input", "in.conllu", "--out", "tagged.tsv"],
    );
    assert_eq!(code(&to_file), 0);
    assert_eq!(stdout(&to_file), "");
    assert_eq!(std::fs::read_to_string(dir.path().join("tagged.tsv")).unwrap(), text);

    // Empty input produces empty output and succeeds.
    std::fs::write(dir.path().join("empty.conllu"), "").unwrap();
    let empty = run_in(
        dir.path(),
        &["tag", "--model", "out/model", "--input", "empty.conllu"],
    );
    assert_eq!(code(&empty), 0);
    assert_eq!(stdout(&empty), "");

    // A malformed row is a data error naming its line.
    std::fs::write(dir.path().join("bad.conllu"), "1\tpata\t_\n").unwrap();
    let bad = run_in(
        dir.path(),
        &["tag", "--model", "out/model", "--input", "bad.conllu"],
    );
    assert_eq!(code(&bad), 2);
    assert!(stderr(&bad).contains("line 1"), "{}", stderr(&bad));

    // Evaluate the saved inflector: report plus per-type dump, whose
    // recomputed accuracy agrees with both the report and the printed
    // summary.
    let eval = run_in(dir.path(), &["evaluate", "--config", "c.toml"]);
    assert_eq!(code(&eval), 0, "{}", stderr(&eval));
    let report = std::fs::read_to_string(dir.path().join("out/report.txt")).unwrap();
    let fingerprint = std::fs::read_to_string(dir.path().join("out/fingerprint")).unwrap();
    assert!(
        report.starts_with(&format!("fingerprint\t{}", fingerprint.trim())),
        "{report}"
    );
    let dump = std::fs::read_to_string(dir.path().join("out/decode_dump.tsv")).unwrap();
    let mut rows = dump.lines();
    assert_eq!(rows.next().unwrap(), "form\tlemma\ttag\tdecoded\tcorrect");
    let mut correct = 0;
    let mut total = 0;
    for row in rows {
        total += 1;
        if row.ends_with("\ttrue") {
            correct += 1;
        }
    }
    assert_eq!(total, 12);
    let total_line = report.lines().find(|l| l.starts_with("total\t")).unwrap();
    assert_eq!(total_line.split('\t').nth(1).unwrap(), correct.to_string());
    assert_eq!(total_line.split('\t').nth(2).unwrap(), "12");
    assert!(stdout(&eval).contains(&format!("accuracy {correct}/12")));
}

#[test]
fn equal_seeds_reproduce_artifacts_exactly_and_seeds_matter() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.toml"), synth_config("out_a", "nn", 5)).unwrap();
    std::fs::write(dir.path().join("b.toml"), synth_config("out_b", "nn", 5)).unwrap();
    let a = run_in(dir.path(), &["train", "--config", "a.toml"]);
    let b = run_in(dir.path(), &["train", "--config", "b.toml"]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(code(&b), 0, "{}", stderr(&b));

    // The output directory is not semantic: fingerprints agree.
    let fp_a = std::fs::read_to_string(dir.path().join("out_a/fingerprint")).unwrap();
    let fp_b = std::fs::read_to_string(dir.path().join("out_b/fingerprint")).unwrap();
    assert_eq!(fp_a, fp_b);

    // Every model file is byte-identical across the two runs.
    let mut names: Vec<String> = std::fs::read_dir(dir.path().join("out_a/model"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.contains(&"inflector.params".to_string()), "{names:?}");
    for name in &names {
        let bytes_a = std::fs::read(dir.path().join("out_a/model").join(name)).unwrap();
        let bytes_b = std::fs::read(dir.path().join("out_b/model").join(name)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{name} differs between equal-seed runs");
    }

    // So are the evaluation reports.
    let ea = run_in(dir.path(), &["evaluate", "--config", "a.toml"]);
    let eb = run_in(dir.path(), &["evaluate", "--config", "b.toml"]);
    assert_eq!(code(&ea), 0, "{}", stderr(&ea));
    assert_eq!(code(&eb), 0, "{}", stderr(&eb));
    assert_eq!(stdout(&ea), stdout(&eb));
    assert_eq!(
        std::fs::read_to_string(dir.path().join("out_a/report.txt")).unwrap(),
        std::fs::read_to_string(dir.path().join("out_b/report.txt")).unwrap()
    );

    // A different seed changes the learned parameters.
    let c = run_in(
        dir.path(),
        &["train", "--config", "a.toml", "--seed", "9"],
    );
    assert_eq!(code(&c), 0, "{}", stderr(&c));
    let bytes_b = std::fs::read(dir.path().join("out_b/model/inflector.params")).unwrap();
    let bytes_c = std::fs::read(dir.path().join("out_a/model/inflector.params")).unwrap();
    assert_ne!(bytes_b, bytes_c, "seed override must reach the trainer");
}
