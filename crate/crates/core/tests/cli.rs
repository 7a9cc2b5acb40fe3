mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use rnr::cli::{load_checkpoint_for, run_experiment, ExperimentConfig, RunReport};
use rnr::trainer::Mode;

fn rnr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rnr")).args(args).output().expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn single_rank_bpr_on_bundled_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let data = common::fixture("ratings100.dat");
    let started = Instant::now();
    let res = rnr(&[
        "--data",
        path_str(&data),
        "--holdout",
        "40",
        "--mode",
        "single-rank",
        "--ranker",
        "bpr",
        "--out",
        path_str(&out),
    ]);
    assert!(started.elapsed() < Duration::from_secs(60));
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.starts_with("BPR") && stdout.contains("Recall@10") && stdout.contains("MRR@10"), "{stdout}");

    let report: RunReport = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.model, "BPR");
    assert_eq!(report.test.k, 10);
    assert!(report.test.mrr_at_k <= report.test.recall_at_k);
    assert_eq!(report.test.users_evaluated + report.test.users_skipped, report.data.n_test);
    assert_eq!(report.data.n_validation + report.data.n_test, 40);

    let log = fs::read_to_string(out.join("epoch_log.csv")).unwrap();
    assert_eq!(log.lines().count(), report.epochs_trained + 1);
    let ckpt = load_checkpoint_for(&out.join("model.rnr"), report.data.n_users, report.data.n_items, 50).unwrap();
    assert_eq!(ckpt.mode, Mode::SingleRank);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    assert!(summary.lines().nth(1).unwrap().starts_with("BPR,ratings100,"));
}

#[test]
fn invalid_mode_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let data = common::fixture("toy.dat");
    let res = rnr(&["--data", path_str(&data), "--holdout", "2", "--mode", "rank-n-rate", "--out", path_str(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("mode"));
    assert!(!out.exists());
}

#[test]
fn data_errors_exit_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.dat");
    fs::write(&junk, "not a rating line\nanother one\n").unwrap();
    let out = dir.path().join("out");
    let res = rnr(&["--data", path_str(&junk), "--holdout", "1", "--mode", "popularity", "--out", path_str(&out)]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("ingest"));
    assert!(!out.exists());
}

#[test]
fn too_many_holdout_users_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::fixture("toy.dat");
    let out = dir.path().join("out");
    let res = rnr(&["--data", path_str(&data), "--holdout", "500", "--mode", "popularity", "--out", path_str(&out)]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn divergence_exits_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::fixture("toy.dat");
    let out = dir.path().join("out");
    let res = rnr(&[
        "--data",
        path_str(&data),
        "--holdout",
        "4",
        "--min-interactions",
        "1",
        "--mode",
        "single-rate",
        "--lr",
        "1e300",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(res.status.code(), Some(4), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg_path = dir.path().join("exp.conf");
    fs::write(
        &cfg_path,
        format!(
            "# toy experiment\ndata = {}\nholdout = 4\nmin-interactions = 1\nmode = rnr\nranker = cdae\n\
             lr = 0.05\ndim = 8\nepochs-max = 9\nout = {}\n",
            common::fixture("toy.dat").display(),
            out.display()
        ),
    )
    .unwrap();
    let res = rnr(&["--config", path_str(&cfg_path), "--epochs-max", "2", "--patience", "0"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report: RunReport = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.model, "RnR(CDAE,SVD)");
    assert_eq!(report.hyperparams.epochs_max, 2);
    assert_eq!(report.epochs_trained, 2);
    assert_eq!(report.hyperparams.dim, 8);
}

#[test]
fn summary_accumulates_rows_and_checkpoint_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let base = |mode: &str| {
        ExperimentConfig::from_pairs([
            ("data", common::fixture("ratings100.dat").display().to_string()),
            ("holdout", "40".into()),
            ("mode", mode.into()),
            ("lr", "0.05".into()),
            ("dim", "8".into()),
            ("epochs-max", "3".into()),
            ("out", dir.path().display().to_string()),
        ])
        .unwrap()
    };
    run_experiment(&base("popularity")).unwrap();
    let outcome = run_experiment(&base("vanilla")).unwrap();
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("model,dataset,alpha,lambda,seed"));
    assert!(rows[1].starts_with("Popularity,"));
    assert!(rows[2].starts_with("Vanilla(BPR,SVD),"));

    let r = &outcome.report.data;
    let ckpt = load_checkpoint_for(&dir.path().join("model.rnr"), r.n_users, r.n_items, 8).unwrap();
    assert_eq!(Some(ckpt), outcome.checkpoint);
    assert!(load_checkpoint_for(&dir.path().join("model.rnr"), r.n_users, r.n_items, 50).is_err());
}
