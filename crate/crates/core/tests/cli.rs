use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn seqmia(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqmia"))
        .args(args)
        .env_remove("SQMI_THREADS")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_owned()
}

fn synth(dir: &Path) -> String {
    let f = path(dir, "f.sqmi");
    let out = seqmia(&[
        "synth", "--m", "12", "--n", "30", "--t", "4", "--cov", "ar1", "--rho", "0.9", "--shift", "1",
        "--seed", "1", "--out", &f,
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    f
}

#[test]
fn validate_round_trip_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let f = synth(dir.path());
    let out = seqmia(&["validate", "--input", &f]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("M=12 N=30 T=4"));
}

#[test]
fn validate_csv_directory() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("fixture");
    fs::create_dir(&d).unwrap();
    fs::write(d.join("model_0.csv"), "0.1,0.2\n0.3,0.4\n").unwrap();
    fs::write(d.join("model_1.csv"), "0.5,0.6\n0.7,0.8\n").unwrap();
    fs::write(d.join("model_2.csv"), "0.9,1.0\n1.1,1.2\n").unwrap();
    fs::write(d.join("mask.csv"), "1,0\n0,1\n1,1\n").unwrap();
    let out = seqmia(&["validate", "--input", d.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("M=3 N=2 T=2"));
}

#[test]
fn corrupt_container_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let f = synth(dir.path());
    let mut bytes = fs::read(&f).unwrap();
    bytes.truncate(bytes.len() / 2);
    fs::write(&f, bytes).unwrap();
    assert_eq!(code(&seqmia(&["validate", "--input", &f])), 1);
}

#[test]
fn univariate_with_min_reduction_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let f = synth(dir.path());
    let out = seqmia(&[
        "attack", "--input", &f, "--estimator", "univariate", "--reduce", "min", "--reduce-param", "2",
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration conflict"));
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(code(&seqmia(&["attack", "--no-such-flag"])), 1);
    assert_eq!(code(&seqmia(&["frobnicate"])), 1);
    assert_eq!(code(&seqmia(&["eval", "--scores", "x.csv", "--fpr", "abc"])), 1);
    assert_eq!(code(&seqmia(&["--help"])), 0);
    assert_eq!(code(&seqmia(&["attack", "--help"])), 0);
}

#[test]
fn missing_input_is_a_runtime_error() {
    assert_eq!(code(&seqmia(&["validate", "--input", "/nonexistent/x.sqmi"])), 2);
}

#[test]
fn pipeline_writes_reports_under_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let f = synth(dir.path());
    let out_dir = dir.path().to_str().unwrap();
    let run = |args: &[&str]| {
        let mut all = vec!["--out-dir", out_dir];
        all.extend_from_slice(args);
        let out = seqmia(&all);
        assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out
    };
    run(&["attack", "--input", &f, "--estimator", "full", "--pooling", "shared", "--out", "scores.csv"]);
    let scores = fs::read_to_string(dir.path().join("scores.csv")).unwrap();
    assert!(scores.starts_with("target_index,canary_index,score,label,fallback_flag\n"));
    assert_eq!(scores.lines().count(), 1 + 12 * 30);

    run(&["eval", "--scores", &path(dir.path(), "scores.csv"), "--fpr", "0.01,0.1", "--roc-out", "roc.csv", "--out", "eval.csv"]);
    let eval = fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    assert!(eval.starts_with("scope,n_pos,n_neg,auc,fpr_target,tpr\npooled,"));
    assert_eq!(eval.lines().count(), 3);

    run(&["covstudy", "--input", &f, "--grid", "4,6", "--gold", "6", "--canaries", "10", "--out", "cov.csv"]);
    let cov = fs::read_to_string(dir.path().join("cov.csv")).unwrap();
    assert!(cov.starts_with("metric,class,estimator,pooling,shadow_count,value,canaries\n"));

    run(&["sweep", "--input", &f, "--grid", "4,11", "--fpr", "0.1", "--out", "sweep.csv"]);
    let sweep = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 2 * 2);

    for name in ["roc", "cov", "sweep", "eval"] {
        run(&["plot", "--in", &path(dir.path(), &format!("{name}.csv")), "--out", &format!("{name}.svg")]);
        let svg = fs::read_to_string(dir.path().join(format!("{name}.svg"))).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    let leftovers: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().contains(".tmp"))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn attack_to_stdout_matches_file_output() {
    let dir = tempfile::tempdir().unwrap();
    let f = synth(dir.path());
    let file = path(dir.path(), "s.csv");
    assert_eq!(code(&seqmia(&["attack", "--input", &f, "--out", &file])), 0);
    let out = seqmia(&["attack", "--input", &f, "--threads", "3"]);
    assert_eq!(code(&out), 0);
    assert_eq!(out.stdout, fs::read(&file).unwrap());
}

#[test]
fn plot_rejects_unknown_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = path(dir.path(), "x.csv");
    fs::write(&csv, "a,b\n1,2\n").unwrap();
    let out = seqmia(&["plot", "--in", &csv, "--out", &path(dir.path(), "x.svg")]);
    assert_eq!(code(&out), 1);
}
