//! End-to-end runs of the command-line binary: the full fixture-to-scores
//! pipeline, reproducibility of fixture generation, error exit codes, and
//! the data-root environment variable.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hopsum"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary should launch")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed with {:?}\nstderr: {}",
        out.status.code(),
        stderr_of(out)
    );
}

fn path_str(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn the_whole_pipeline_runs_from_fixtures_to_scores() {
    let dir = tempfile::tempdir().unwrap();
    let data = path_str(dir.path(), "copy.jsonl");
    let vocab = path_str(dir.path(), "vocab.txt");
    let run_dir = path_str(dir.path(), "run");
    let answers = path_str(dir.path(), "answers.jsonl");

    let tiny = [
        "--precision",
        "f64",
        "--hops",
        "1",
        "--emb-dim",
        "8",
        "--enc-hidden",
        "4",
        "--dec-hidden",
        "6",
        "--attn-dim",
        "5",
        "--vocab-size",
        "48",
        "--batch-size",
        "4",
        "--dropout",
        "0.0",
        "--max-answer-len",
        "4",
        "--beam-size",
        "1",
    ];

    let made = run(&[
        "make-fixtures",
        "--task",
        "copy",
        "--size",
        "12",
        "--seed",
        "7",
        "--out",
        &data,
    ]);
    assert_ok(&made, "make-fixtures");

    let built = run(&["build-vocab", "--data", &data, "--out", &vocab]);
    assert_ok(&built, "build-vocab");

    let mut train_args = vec![
        "train",
        "--data",
        &data,
        "--vocab",
        &vocab,
        "--out-dir",
        &run_dir,
        "--phase1-epochs",
        "2",
        "--phase2-epochs",
        "0",
    ];
    train_args.extend_from_slice(&tiny);
    let trained = run(&train_args);
    assert_ok(&trained, "train");
    // the resolved config echoes to stderr on every run
    assert!(stderr_of(&trained).contains("hops = 1"));
    assert!(Path::new(&run_dir).join("best.ckpt").is_file());
    assert!(Path::new(&run_dir).join("train_log.jsonl").is_file());

    let ckpt = path_str(&Path::new(&run_dir), "best.ckpt");
    let mut gen_args = vec![
        "generate",
        "--data",
        &data,
        "--vocab",
        &vocab,
        "--checkpoint",
        &ckpt,
        "--out",
        &answers,
    ];
    gen_args.extend_from_slice(&tiny);
    let generated = run(&gen_args);
    assert_ok(&generated, "generate");
    let produced = std::fs::read_to_string(&answers).unwrap();
    assert_eq!(produced.lines().count(), 12);
    for line in produced.lines() {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(record["id"].as_str().unwrap().starts_with("copy-"));
        assert!(record["answer"].is_string());
        assert!(record["logp"].is_number());
    }

    let scored = run(&[
        "evaluate",
        "--data",
        &data,
        "--answers",
        &answers,
        "--baselines",
    ]);
    assert_ok(&scored, "evaluate");
    let report = stdout_of(&scored);
    for needle in [
        "model.rougeL_f1",
        "model.duplication_1",
        "lead3.rougeL_f1",
        "mmr.rougeL_f1",
    ] {
        assert!(report.contains(needle), "missing {needle} in:\n{report}");
    }

    let mut trace_args = vec![
        "trace-hops",
        "--data",
        &data,
        "--vocab",
        &vocab,
        "--checkpoint",
        &ckpt,
        "--top",
        "2",
    ];
    trace_args.extend_from_slice(&tiny);
    let traced = run(&trace_args);
    assert_ok(&traced, "trace-hops");
    let first = stdout_of(&traced).lines().next().unwrap().to_string();
    let record: serde_json::Value = serde_json::from_str(&first).unwrap();
    let hops = record["justifications"].as_array().unwrap();
    assert_eq!(hops.len(), 1);
    assert!(hops[0].as_array().unwrap().len() <= 2);
}

#[test]
fn fixture_generation_is_reproducible_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let a = path_str(dir.path(), "a.jsonl");
    let b = path_str(dir.path(), "b.jsonl");
    for out in [&a, &b] {
        let made = run(&[
            "make-fixtures",
            "--task",
            "multihop",
            "--size",
            "64",
            "--seed",
            "7",
            "--out",
            out,
        ]);
        assert_ok(&made, "make-fixtures");
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn error_classes_map_to_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = path_str(dir.path(), "tiny.jsonl");
    let made = run(&[
        "make-fixtures",
        "--task",
        "copy",
        "--size",
        "4",
        "--seed",
        "1",
        "--out",
        &data,
    ]);
    assert_ok(&made, "make-fixtures");

    // unknown flags are a usage error
    let unknown = run(&["train", "--warp-speed", "9"]);
    assert_eq!(unknown.status.code(), Some(2));

    // a bad override value is a configuration error
    let bad_value = run(&[
        "build-vocab",
        "--data",
        &data,
        "--out",
        &path_str(dir.path(), "v.txt"),
        "--gate",
        "triangular",
    ]);
    assert_eq!(bad_value.status.code(), Some(2));
    assert!(stderr_of(&bad_value).contains("error:"));

    // a missing input file is a data error
    let missing = run(&[
        "build-vocab",
        "--data",
        &path_str(dir.path(), "absent.jsonl"),
        "--out",
        &path_str(dir.path(), "v.txt"),
    ]);
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn relative_data_paths_resolve_under_the_environment_root() {
    let dir = tempfile::tempdir().unwrap();
    let data = path_str(dir.path(), "root.jsonl");
    let made = run(&[
        "make-fixtures",
        "--task",
        "copy",
        "--size",
        "4",
        "--seed",
        "2",
        "--out",
        &data,
    ]);
    assert_ok(&made, "make-fixtures");

    let built = bin()
        .env("HOPSUM_DATA", dir.path())
        .args([
            "build-vocab",
            "--data",
            "root.jsonl",
            "--out",
            &path_str(dir.path(), "v.txt"),
        ])
        .output()
        .expect("binary should launch");
    assert_ok(&built, "build-vocab under HOPSUM_DATA");
    assert!(Path::new(&path_str(dir.path(), "v.txt")).is_file());
}
