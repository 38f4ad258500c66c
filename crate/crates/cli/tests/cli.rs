//! End-to-end runs of the spmgen binary through every subcommand.

use std::path::Path;
use std::process::{Command, Output};

fn spmgen(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spmgen"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = spmgen(dir, args);
    assert!(
        out.status.success(),
        "spmgen {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn fails(dir: &Path, args: &[&str]) -> String {
    let out = spmgen(dir, args);
    assert!(!out.status.success(), "spmgen {args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).to_string()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("reading {name}: {e}"))
}

/// gen-toy, bpe learn/apply, train, decode, evaluate, diagnose, align.
#[test]
fn pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    ok(dir, &["gen-toy", "--pairs", "8", "--vocab", "6", "--min-len", "4",
              "--max-len", "6", "--seed", "9", "--src", "toy.src", "--tgt", "toy.tgt"]);
    assert_eq!(read(dir, "toy.src").lines().count(), 8);

    ok(dir, &["bpe", "learn", "--corpus", "toy.src", "toy.tgt", "--num-merges", "0",
              "--merges", "merges.txt", "--vocab", "vocab.tsv"]);
    ok(dir, &["bpe", "apply", "--merges", "merges.txt", "--vocab", "vocab.tsv",
              "--input", "toy.src", "--output", "seg.txt"]);
    let seg = read(dir, "seg.txt");
    assert_eq!(seg.lines().count(), 8);
    assert!(seg.contains('\u{2581}'), "segmented output shows word-end markers");

    ok(dir, &["train", "--source", "toy.src", "--target", "toy.tgt",
              "--val-source", "toy.src", "--val-target", "toy.tgt",
              "--merges", "merges.txt", "--vocab", "vocab.tsv",
              "--checkpoint", "model.ckpt", "--report", "report.tsv",
              "--dim-embed", "4", "--dim-hidden", "8", "--layers", "1",
              "--batch-size", "8", "--max-epochs", "2", "--dropout-rate", "0.0",
              "--patience", "0", "--seed", "5"]);
    let manifest = read(dir, "model.ckpt.manifest.tsv");
    assert!(manifest.contains("pairs_train\t8"));
    assert!(manifest.contains("seed\t5"));
    assert!(manifest.contains("epoch\ttrain-loss\tval-loss\tlr"));
    let report = read(dir, "report.tsv");
    assert_eq!(report.lines().count(), 3, "header plus two epochs");

    ok(dir, &["decode", "--checkpoint", "model.ckpt", "--merges", "merges.txt",
              "--vocab", "vocab.tsv", "--input", "toy.src", "--output", "sys.txt",
              "--beam-size", "3"]);
    assert_eq!(read(dir, "sys.txt").lines().count(), 8);

    let eval = ok(dir, &["evaluate", "--system", "sys.txt", "--reference", "toy.tgt"]);
    let stdout = String::from_utf8_lossy(&eval.stdout).to_string();
    assert!(stdout.starts_with("metric\tprecision\trecall\tf1\n"));
    assert_eq!(stdout.lines().count(), 4);

    let diag = ok(dir, &["diagnose", "--system", "sys.txt", "--reference", "toy.tgt"]);
    let stdout = String::from_utf8_lossy(&diag.stdout).to_string();
    assert!(stdout.lines().last().unwrap().starts_with("total\t"));

    ok(dir, &["align", "--checkpoint", "model.ckpt", "--merges", "merges.txt",
              "--vocab", "vocab.tsv", "--source", "toy.src", "--target", "toy.tgt",
              "--out-dir", "align", "--limit", "2", "--harvest", "harvest.tsv"]);
    let attn = read(dir, "align/attention_0001.tsv");
    assert!(attn.starts_with("step\t"));
    let pred = read(dir, "align/prediction_0002.tsv");
    assert!(pred.lines().next().unwrap().ends_with("\telsewhere"));
    let harvest = read(dir, "harvest.tsv");
    assert!(harvest.starts_with("count\ttarget-token\tpredicted-source-token\n"));
}

/// Same seed and inputs give byte-identical checkpoints and manifests.
#[test]
fn reruns_are_byte_identical() {
    let run = |seed: &str| {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path();
        ok(dir, &["gen-toy", "--pairs", "6", "--vocab", "5", "--min-len", "4",
                  "--max-len", "5", "--seed", "2", "--src", "t.src", "--tgt", "t.tgt"]);
        ok(dir, &["bpe", "learn", "--corpus", "t.src", "t.tgt", "--num-merges", "0",
                  "--merges", "m.txt", "--vocab", "v.tsv"]);
        ok(dir, &["train", "--source", "t.src", "--target", "t.tgt",
                  "--merges", "m.txt", "--vocab", "v.tsv", "--checkpoint", "m.ckpt",
                  "--dim-embed", "4", "--dim-hidden", "6", "--layers", "1",
                  "--batch-size", "6", "--max-epochs", "2", "--dropout-rate", "0.1",
                  "--patience", "0", "--seed", seed]);
        ok(dir, &["decode", "--checkpoint", "m.ckpt", "--merges", "m.txt",
                  "--vocab", "v.tsv", "--input", "t.src", "--output", "o.txt",
                  "--beam-size", "2"]);
        (
            std::fs::read(dir.join("m.ckpt")).unwrap(),
            read(dir, "m.ckpt.manifest.tsv"),
            read(dir, "o.txt"),
        )
    };
    let a = run("11");
    let b = run("11");
    assert_eq!(a.0, b.0, "checkpoints differ");
    assert_eq!(a.1, b.1, "manifests differ");
    assert_eq!(a.2, b.2, "decodes differ");
    let c = run("12");
    assert_ne!(a.0, c.0, "different seeds should differ");
}

/// A settings file feeds defaults and flags override it.
#[test]
fn settings_file_and_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["gen-toy", "--pairs", "5", "--vocab", "5", "--min-len", "4",
              "--max-len", "5", "--seed", "4", "--src", "t.src", "--tgt", "t.tgt"]);
    ok(dir, &["bpe", "learn", "--corpus", "t.src", "t.tgt", "--num-merges", "0",
              "--merges", "m.txt", "--vocab", "v.tsv"]);
    std::fs::write(
        dir.join("run.conf"),
        "dim_embed = 4\ndim_hidden = 6\nlayers = 1\nmax_epochs = 3\nbatch_size = 5\n\
         dropout_rate = 0.0\npatience = 0\nseed = 6\n",
    )
    .unwrap();
    ok(dir, &["train", "--source", "t.src", "--target", "t.tgt",
              "--merges", "m.txt", "--vocab", "v.tsv", "--checkpoint", "m.ckpt",
              "--config", "run.conf", "--max-epochs", "1"]);
    let manifest = read(dir, "m.ckpt.manifest.tsv");
    assert!(manifest.contains("dim_embed\t4"), "file-provided value");
    assert!(manifest.contains("max_epochs\t1"), "flag overrides file");
    assert!(manifest.contains("seed\t6"));
}

/// Failures exit nonzero with a single parseable error line.
#[test]
fn errors_are_single_line_and_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let stderr = fails(dir, &["bpe", "learn", "--corpus", "missing.txt",
                              "--merges", "m.txt", "--vocab", "v.tsv"]);
    let lines: Vec<&str> = stderr.lines().filter(|l| !l.is_empty()).collect();
    assert_eq!(lines.len(), 1, "stderr was: {stderr}");
    assert!(lines[0].starts_with("error: "));

    std::fs::write(dir.join("a.txt"), "x\ny\n").unwrap();
    std::fs::write(dir.join("b.txt"), "x\n").unwrap();
    let stderr = fails(dir, &["evaluate", "--system", "a.txt", "--reference", "b.txt"]);
    assert!(stderr.contains('2') && stderr.contains('1'));

    // unknown settings key
    std::fs::write(dir.join("bad.conf"), "warp_speed = 9\n").unwrap();
    std::fs::write(dir.join("e.txt"), "a b c\n").unwrap();
    let stderr = fails(dir, &["train", "--source", "e.txt", "--target", "e.txt",
                              "--merges", "m.txt", "--vocab", "v.tsv",
                              "--checkpoint", "c.ckpt", "--config", "bad.conf"]);
    assert!(stderr.contains("warp_speed"));
}
