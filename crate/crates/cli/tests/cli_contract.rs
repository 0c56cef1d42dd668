//! The command-line contract: exit-code classes, `--help` behavior, and
//! that bad input is rejected with a useful message before any work starts.
//!
//! Exit codes: 0 success, 2 usage (flags, config, impossible architecture),
//! 3 environment (I/O, datasets, CSVs), 4 numerics (degenerate statistics,
//! training aborts).

use std::process::Command;

/// Runs the shipped binary, returning stdout, stderr, and the exit code.
fn rawres(args: &[&str]) -> (String, String, i32) {
    let out = Command::new(env!("CARGO_BIN_EXE_rawres"))
        .args(args)
        .output()
        .expect("binary should spawn");
    (
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
        out.status.code().unwrap_or(-1),
    )
}

#[test]
fn help_exits_zero_everywhere() {
    let (_, _, code) = rawres(&["--help"]);
    assert_eq!(code, 0);
    for sub in ["param-count", "features", "train", "evaluate", "experiment", "stats", "synth"] {
        let (stdout, _, code) = rawres(&[sub, "--help"]);
        assert_eq!(code, 0, "{sub} --help");
        assert!(stdout.contains("Usage:"), "{sub} --help prints usage");
    }
}

#[test]
fn usage_errors_exit_two() {
    // Unknown subcommand and unknown flag (argument-parser level).
    let (_, _, code) = rawres(&["frobnicate"]);
    assert_eq!(code, 2);
    let (_, _, code) = rawres(&["param-count", "--arch", "m34res", "--rb", "RB1", "--bogus"]);
    assert_eq!(code, 2);

    // A block kind that parses as a flag value but names no wiring.
    let (_, stderr, code) = rawres(&["param-count", "--arch", "m34res", "--rb", "RB7"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("RB7"), "message names the bad kind: {stderr}");
}

#[test]
fn bad_config_is_rejected_before_any_training() {
    let dir = tempfile::tempdir().unwrap();

    let corpus = dir.path().join("corpus");
    let root_line = format!("root = {}\n", corpus.display());

    // Unknown residual block kind in the grid list.
    let bad_kind = dir.path().join("kind.conf");
    std::fs::write(&bad_kind, format!("dataset = synthetic\n{root_line}rb_kinds = RB7\n"))
        .unwrap();
    let (_, stderr, code) =
        rawres(&["experiment", "--config", bad_kind.to_str().unwrap(), "--out", "out"]);
    assert_eq!(code, 2, "{stderr}");
    assert!(stderr.contains("RB7"), "{stderr}");
    assert!(!corpus.exists(), "no corpus generated for a bad config");

    // Unknown key.
    let bad_key = dir.path().join("key.conf");
    std::fs::write(&bad_key, format!("dataset = synthetic\n{root_line}bogus = 1\n")).unwrap();
    let (_, stderr, code) =
        rawres(&["experiment", "--config", bad_key.to_str().unwrap(), "--out", "out"]);
    assert_eq!(code, 2, "{stderr}");
    assert!(stderr.contains("bogus"), "{stderr}");

    // Missing config file is a usage problem, not an environment one.
    let (_, _, code) = rawres(&["experiment", "--config", "/no/such/file.conf", "--out", "out"]);
    assert_eq!(code, 2);
}

#[test]
fn missing_dataset_root_exits_three_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("absent");
    for dataset in ["urbansound8k", "esc10"] {
        let conf = dir.path().join(format!("{dataset}.conf"));
        std::fs::write(&conf, format!("dataset = {dataset}\nroot = {}\n", root.display()))
            .unwrap();
        let (_, stderr, code) = rawres(&[
            "experiment",
            "--config",
            conf.to_str().unwrap(),
            "--out",
            dir.path().join("out").to_str().unwrap(),
        ]);
        assert_eq!(code, 3, "{dataset}: {stderr}");
        assert!(stderr.contains("absent"), "{dataset} names the unresolved path: {stderr}");
    }
}

#[test]
fn unusable_statistics_input_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("thin.csv");
    // One repetition per group is too few to compare.
    std::fs::write(&csv, "rb,preproc,rep,accuracy,epochs\nRB1,none,0,0.5,3\nRB2,none,0,0.6,3\n")
        .unwrap();
    let (_, stderr, code) = rawres(&["stats", "--results", csv.to_str().unwrap()]);
    assert_eq!(code, 4, "{stderr}");
    assert!(stderr.contains("two"), "message explains the requirement: {stderr}");
}
