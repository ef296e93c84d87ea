//! The `seq3` binary, driven as a subprocess.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn seq3(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seq3"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = seq3(args);
    assert!(
        out.status.success(),
        "seq3 {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synthetic(dir: &Path, sentences: &str) {
    ok(&["gen-synthetic", "--desk-profile", "--seed", "3", "--sentences", sentences, "--out", p(dir)]);
}

#[test]
fn build_vocab_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synthetic(&data, "120");
    let corpus = data.join("corpus.txt");
    for run in ["a", "b"] {
        ok(&["build-vocab", "--seed", "1", "--corpus", p(&corpus), "--out", p(&tmp.path().join(run))]);
    }
    for file in ["vocab.txt", "idf.txt"] {
        let a = fs::read(tmp.path().join("a").join(file)).unwrap();
        let b = fs::read(tmp.path().join("b").join(file)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{file} differs");
    }
}

#[test]
fn missing_corpus_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("no-such-corpus.txt");
    let out = seq3(&["build-vocab", "--seed", "1", "--corpus", p(&missing), "--out", p(&tmp.path().join("v"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("no-such-corpus.txt"), "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = seq3(&["gen-synthetic", "--seed", "1", "--set", "model.nope=1", "--out", p(tmp.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.nope"));
}

#[test]
fn compress_keeps_lines_and_restores_unknown_words() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synthetic(&data, "60");
    let corpus = data.join("corpus.txt");
    let vocab_dir = tmp.path().join("vocab");
    ok(&["build-vocab", "--seed", "1", "--corpus", p(&corpus), "--out", p(&vocab_dir)]);
    let model_dir = tmp.path().join("model");
    let (vocab_file, idf_file) = (vocab_dir.join("vocab.txt"), vocab_dir.join("idf.txt"));
    let tiny = [
        "model.emb_dim=4",
        "model.enc_hidden=3",
        "model.enc_layers=1",
        "model.dec_hidden=4",
        "model.dec_layers=1",
        "train.epochs=1",
    ];
    let mut args = vec![
        "train",
        "--seed",
        "3",
        "--corpus",
        p(&corpus),
        "--vocab",
        p(&vocab_file),
        "--idf",
        p(&idf_file),
        "--set",
        "loss.lambda_p=0",
        "--out",
        p(&model_dir),
    ];
    for kv in &tiny {
        args.extend(["--set", kv]);
    }
    ok(&args);

    let input = tmp.path().join("input.txt");
    let lines = ["Zanzibar Quetzal f00 f01 f02 f03 Zanzibar", "", "f00 f01 f02 f03 f04 f05 f06 f07 f08 f09"];
    fs::write(&input, lines.join("\n") + "\n").unwrap();
    let output = tmp.path().join("summaries.txt");
    let stdout = ok(&[
        "compress",
        "--checkpoint",
        p(&model_dir.join("seq3.ckpt")),
        "--vocab",
        p(&vocab_dir.join("vocab.txt")),
        "--input",
        p(&input),
        "--ratio",
        "1.0",
        "--out",
        p(&output),
    ]);
    assert!(stdout.contains("compressed 3 lines"), "{stdout}");
    let text = fs::read_to_string(&output).unwrap();
    let got: Vec<&str> = text.lines().collect();
    assert_eq!(got.len(), lines.len());
    assert_eq!(got[1], "");
    let vocab = fs::read_to_string(vocab_dir.join("vocab.txt")).unwrap();
    for word in got[0].split_whitespace().chain(got[2].split_whitespace()) {
        assert!(!word.starts_with("<oov"), "placeholder leaked: {}", got[0]);
        assert!(
            ["Zanzibar", "Quetzal"].contains(&word) || vocab.lines().any(|l| l.split('\t').next() == Some(word)),
            "{word} neither known nor copied"
        );
    }
}

#[test]
fn evaluate_reports_filtered_examples() {
    let tmp = tempfile::tempdir().unwrap();
    let cands = tmp.path().join("cands.txt");
    let refs = tmp.path().join("refs.txt");
    let srcs = tmp.path().join("srcs.txt");
    fs::write(&cands, "police arrest man\nstocks fall\n\n").unwrap();
    fs::write(&refs, "police arrested a man\nstocks fell sharply\n\n").unwrap();
    fs::write(&srcs, "the police arrested a man on friday\nstocks fell sharply in tokyo\n\n").unwrap();
    let report = tmp.path().join("report.json");
    let stdout = ok(&[
        "evaluate",
        "--candidates",
        p(&cands),
        "--references",
        p(&refs),
        "--sources",
        p(&srcs),
        "--baselines",
        "--out",
        p(&report),
    ]);
    assert!(stdout.contains("lead-8") && stdout.contains("prefix-75"), "{stdout}");
    assert!(stdout.contains("evaluated 2 examples, filtered 1"), "{stdout}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(json["systems"]["seq3"]["mean"]["r1"]["f1"].as_f64().unwrap() > 0.5);
}
