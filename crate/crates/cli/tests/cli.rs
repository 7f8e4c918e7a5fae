use std::path::Path;
use std::process::{Command, Output};

fn dsm(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsm"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn data_rows(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).map(String::from).collect()
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let ok = dsm(dir.path(), &["flow", "--problem", "cubic", "--n", "1", "--eps", "0.1", "--w0", "1"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    let gate = dsm(dir.path(), &["contract", "--problem", "manufactured", "--psi-norm", "0.6", "--eps", "0.5"]);
    assert_eq!(code(&gate), 1);
    let singular = dsm(dir.path(), &["contract", "--problem", "linear-diag", "--n", "3", "--shift", "0"]);
    assert_eq!(code(&singular), 2, "{}", String::from_utf8_lossy(&singular.stderr));
    assert_eq!(code(&dsm(dir.path(), &["flow", "--eps", "2"])), 3);
    assert_eq!(code(&dsm(dir.path(), &["frobnicate"])), 3);
    assert_eq!(code(&dsm(dir.path(), &[])), 3);
    assert_eq!(code(&dsm(dir.path(), &["flow", "--problem", "nope"])), 3);
}

#[test]
fn gate_failure_explains_the_condition() {
    let dir = tempfile::tempdir().unwrap();
    let o = dsm(dir.path(), &["contract", "--problem", "manufactured", "--psi-norm", "0.6", "--eps", "0.5"]);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("2 c0 M2 |psi| eps^(1-k) < 1"), "{err}");
    assert!(o.stdout.is_empty() || !String::from_utf8_lossy(&o.stdout).contains("wrote"));
}

#[test]
fn flow_trace_follows_the_decay_law() {
    let dir = tempfile::tempdir().unwrap();
    let o = dsm(dir.path(), &["flow", "--problem", "cubic", "--n", "1", "--eps", "0.1", "--delta", "1e-6", "--w0", "1"]);
    assert_eq!(code(&o), 0);
    let rows = data_rows(&dir.path().join("flow_trace.csv"));
    assert_eq!(rows[0], "t,residual,w_0");
    for row in &rows[1..] {
        let cols: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        let expected = 2.1 * (-cols[0]).exp();
        assert!((cols[1] / expected - 1.0).abs() <= 1e-6, "{row}");
    }
}

#[test]
fn artifacts_embed_config_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let runs: [&[&str]; 5] = [
        &["flow", "--problem", "manufactured", "--n", "4", "--eps", "0.1", "--seed", "5"],
        &["path", "--problem", "linear-diag", "--count", "3"],
        &["contract", "--problem", "manufactured", "--n", "4"],
        &["probe", "--problem", "counterexample", "--n", "50"],
        &["check", "--problem", "cubic", "--n", "3", "--points", "10", "--samples", "10"],
    ];
    for args in runs {
        for format in ["csv", "json"] {
            let sub = dir.path().join(format!("{}-{format}", args[0]));
            let mut full = vec!["--format", format];
            full.extend_from_slice(args);
            let o = dsm(&sub, &full);
            assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
            for entry in std::fs::read_dir(&sub).unwrap() {
                let text = std::fs::read_to_string(entry.unwrap().path()).unwrap();
                if format == "csv" {
                    assert!(text.starts_with("# config: {"), "{args:?}");
                    assert!(text.lines().any(|l| l.starts_with("# seed: ")), "{args:?}");
                } else {
                    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
                    assert!(v["config"]["seed"].is_u64(), "{args:?}");
                    assert_eq!(v["config"]["task"]["command"], args[0]);
                }
            }
        }
    }
}

#[test]
fn replaying_an_artifact_reproduces_it() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    let o = dsm(&first, &["flow", "--problem", "manufactured", "--n", "6", "--eps", "0.05", "--seed", "9"]);
    assert_eq!(code(&o), 0);
    let o = dsm(&second, &["--config", first.join("flow_trace.csv").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["flow_trace.csv", "flow_report.csv"] {
        assert_eq!(data_rows(&first.join(name)), data_rows(&second.join(name)), "{name}");
    }

    let o = dsm(&first, &["--format", "json", "path", "--problem", "manufactured", "--method", "hybrid", "--count", "3"]);
    assert_eq!(code(&o), 0);
    let o = dsm(&second, &["--config", first.join("path.json").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let a: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(first.join("path.json")).unwrap()).unwrap();
    let b: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(second.join("path.json")).unwrap()).unwrap();
    assert_eq!(a["result"], b["result"]);
}

#[test]
fn config_cannot_be_combined_with_a_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let o = dsm(dir.path(), &["--config", "whatever.json", "problems"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_dsm"))
        .env("DSM_OUT_DIR", dir.path())
        .args(["probe", "--problem", "counterexample", "--n", "20"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("probe.csv").exists());
}

#[test]
fn matrix_files_define_linear_problems() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.csv");
    std::fs::write(&m, "# 2x2 system\n2,0\n0,4\n2,4\n").unwrap();
    let o = dsm(dir.path(), &["flow", "--matrix", m.to_str().unwrap(), "--eps", "0.01", "--delta", "1e-12"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = data_rows(&dir.path().join("flow_trace.csv"));
    let last: Vec<f64> = rows.last().unwrap().split(',').map(|c| c.parse().unwrap()).collect();
    assert!((last[2] - 2.0 / 2.01).abs() < 1e-10);
    assert!((last[3] - 4.0 / 4.01).abs() < 1e-10);

    std::fs::write(&m, "1,0\n0\n1,2\n").unwrap();
    let o = dsm(dir.path(), &["flow", "--matrix", m.to_str().unwrap(), "--eps", "0.01"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn problems_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let o = dsm(dir.path(), &["problems"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for name in ["linear-diag", "linear-hilbert", "cubic", "manufactured", "counterexample"] {
        assert!(text.contains(name), "{name}");
    }
}
