//! End-to-end runs of the `lexnmt` binary on the bundled toy corpus.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("data/toy")
        .join(name)
}

fn lexnmt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lexnmt"))
        .args(args)
        .output()
        .expect("failed to start lexnmt")
}

fn ok(args: &[&str]) -> String {
    let out = lexnmt(args);
    assert!(
        out.status.success(),
        "lexnmt {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let prep = tmp.path().join("prep");
    ok(&[
        "preprocess",
        "--train-src",
        s(&data("train.src")),
        "--train-tgt",
        s(&data("train.tgt")),
        "--dev-src",
        s(&data("dev.src")),
        "--dev-tgt",
        s(&data("dev.tgt")),
        "--test-src",
        s(&data("test.src")),
        "--merges",
        "100",
        "--out-dir",
        s(&prep),
    ]);
    for f in [
        "bpe.merges",
        "vocab.src",
        "vocab.tgt",
        "train.src",
        "dev.tgt",
        "test.src",
    ] {
        assert!(prep.join(f).exists(), "{f} missing");
    }
    // full-width input was normalized
    let train_src = std::fs::read_to_string(prep.join("train.src")).unwrap();
    assert!(!train_src.contains('３'));

    let p = |f: &str| prep.join(f);
    ok(&[
        "align",
        "--src",
        s(&p("train.src")),
        "--tgt",
        s(&p("train.tgt")),
        "--src-vocab",
        s(&p("vocab.src")),
        "--tgt-vocab",
        s(&p("vocab.tgt")),
        "--output",
        s(&p("lexicon.tsv")),
    ]);

    let train = |run: &Path| {
        let run_dir = s(run).to_owned();
        ok(&[
            "train",
            "--train-src",
            s(&p("train.src")),
            "--train-tgt",
            s(&p("train.tgt")),
            "--dev-src",
            s(&p("dev.src")),
            "--dev-tgt",
            s(&p("dev.tgt")),
            "--src-vocab",
            s(&p("vocab.src")),
            "--tgt-vocab",
            s(&p("vocab.tgt")),
            "--lexicon",
            s(&p("lexicon.tsv")),
            "--embed-dim",
            "8",
            "--hidden-dim",
            "8",
            "--batch-words",
            "256",
            "--dev-interval",
            "200",
            "--max-epochs",
            "2",
            "--seed",
            "5",
            "--run-dir",
            &run_dir,
        ]);
    };
    let (run_a, run_b) = (tmp.path().join("a"), tmp.path().join("b"));
    train(&run_a);
    train(&run_b);
    let read = |p: PathBuf| std::fs::read(p).unwrap();
    assert_eq!(read(run_a.join("train.log")), read(run_b.join("train.log")));
    assert_eq!(
        read(run_a.join("model.ckpt")),
        read(run_b.join("model.ckpt"))
    );
    let log = String::from_utf8(read(run_a.join("train.log"))).unwrap();
    assert!(log.lines().next().unwrap().contains("\"header\""));
    assert!(log.lines().count() >= 3);

    let mrt = tmp.path().join("mrt");
    ok(&[
        "mrt-train",
        "--init",
        s(&run_a.join("model.ckpt")),
        "--train-src",
        s(&p("train.src")),
        "--train-tgt",
        s(&p("train.tgt")),
        "--dev-src",
        s(&p("dev.src")),
        "--dev-tgt",
        s(&p("dev.tgt")),
        "--lexicon",
        s(&p("lexicon.tsv")),
        "--samples",
        "4",
        "--epochs",
        "1",
        "--max-sample-len",
        "12",
        "--run-dir",
        s(&mrt),
    ]);
    assert!(mrt.join("model.ckpt").exists() && mrt.join("mrt.log").exists());

    // decode three raw lines, ensemble of the ML and MRT models
    let input = tmp.path().join("three.src");
    let raw = std::fs::read_to_string(data("test.src")).unwrap();
    std::fs::write(
        &input,
        raw.lines().take(3).collect::<Vec<_>>().join("\n") + "\n",
    )
    .unwrap();
    let output = tmp.path().join("three.out");
    let scores = tmp.path().join("three.scores");
    ok(&[
        "decode",
        "--model",
        s(&run_a.join("model.ckpt")),
        "--model",
        s(&mrt.join("model.ckpt")),
        "--lexicon",
        s(&p("lexicon.tsv")),
        "--merges",
        s(&p("bpe.merges")),
        "--input",
        s(&input),
        "--output",
        s(&output),
        "--scores",
        s(&scores),
        "--word-penalty",
        "0.8",
        "--threads",
        "2",
    ]);
    let decoded = std::fs::read_to_string(&output).unwrap();
    assert_eq!(decoded.lines().count(), 3);
    assert!(!decoded.contains("@@"));
    assert_eq!(std::fs::read_to_string(&scores).unwrap().lines().count(), 3);

    // lexicon-trained model refuses to decode without its lexicon
    let out = lexnmt(&[
        "decode",
        "--model",
        s(&run_a.join("model.ckpt")),
        "--input",
        s(&input),
    ]);
    assert_eq!(out.status.code(), Some(1));

    let sampled = ok(&[
        "sample",
        "--model",
        s(&run_a.join("model.ckpt")),
        "--lexicon",
        s(&p("lexicon.tsv")),
        "--input",
        s(&p("test.src")),
        "--samples",
        "2",
        "--max-len",
        "10",
    ]);
    assert_eq!(sampled.lines().count(), 100);
}

#[test]
fn score_identical_files() {
    let tgt = data("dev.tgt");
    let tmp = tempfile::tempdir().unwrap();
    let per_sentence = tmp.path().join("sbleu.tsv");
    let out = ok(&[
        "score",
        "--hyp",
        s(&tgt),
        "--ref",
        s(&tgt),
        "--sentence-scores",
        s(&per_sentence),
    ]);
    assert!(out.starts_with("BLEU 100.0"), "{out}");
    assert!(out.contains("RATIO 100.0"));
    let lines = std::fs::read_to_string(per_sentence).unwrap();
    assert_eq!(lines.lines().count(), 50);
    assert!(lines.lines().all(|l| l.ends_with("\t1.000000")));
}

#[test]
fn errors_name_the_problem() {
    let out = lexnmt(&["decode", "--beam", "5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--model"));

    let out = lexnmt(&[
        "score",
        "--hyp",
        "/no/such/hyp.txt",
        "--ref",
        "/no/such/ref.txt",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/hyp.txt"));

    let out = lexnmt(&[
        "score",
        "--hyp",
        s(&data("dev.tgt")),
        "--ref",
        s(&data("train.tgt")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).contains("panicked"));
}
