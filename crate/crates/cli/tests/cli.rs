use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qcm_core::pipeline::PipelineConfig;

fn qcm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qcm")).args(args).output().expect("binary runs")
}

fn fixture() -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures/prices_1001.csv")
        .display()
        .to_string()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

const QUICK: [&str; 6] = ["--families", "sav,as", "--grid", "0.05:0.05:0.95", "--n-random", "300"];

#[test]
fn help_and_usage_errors() {
    assert_eq!(qcm(&["--help"]).status.code(), Some(0));
    assert_eq!(qcm(&["compute", "--bogus"]).status.code(), Some(1));
    assert_eq!(qcm(&[]).status.code(), Some(1));
    let out = tempfile::tempdir().unwrap();
    let o = out.path().to_str().unwrap();
    let f = fixture();
    assert_eq!(qcm(&["compute", "--input", &f, "--out", o, "--mode", "yields"]).status.code(), Some(1));
    assert_eq!(qcm(&["compute", "--input", &f, "--out", o, "--constraint", "maybe"]).status.code(), Some(1));
    assert_eq!(qcm(&["compute", "--input", &f, "--out", o, "--families", "sav,garch"]).status.code(), Some(1));
    assert_eq!(qcm(&["compute", "--input", &f, "--out", o, "--grid", "0.1:0.1"]).status.code(), Some(1));
    assert_eq!(qcm(&["compute", "--input", &f, "--out", o, "--pstar", "1.5"]).status.code(), Some(1));
    assert_eq!(qcm(&["simulate", "--dgp", "garch-normal", "--case", "5", "--out", o]).status.code(), Some(1));
    assert_eq!(qcm(&["simulate", "--dgp", "arch", "--out", o]).status.code(), Some(1));
}

#[test]
fn missing_input_names_the_path() {
    let out = tempfile::tempdir().unwrap();
    let r = qcm(&["compute", "--input", "/no/such/prices.csv", "--out", out.path().to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("/no/such/prices.csv"));
}

#[test]
fn estimation_failure_exits_with_two() {
    let out = tempfile::tempdir().unwrap();
    // Three levels can never fill a pool of five.
    let r = qcm(&[
        "compute", "--input", &fixture(), "--out", out.path().to_str().unwrap(),
        "--families", "sav", "--grid", "0.4:0.1:0.6", "--n-random", "200",
    ]);
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stderr).contains("insufficient pool"));
}

#[test]
fn simulate_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let r = qcm(&[
            "simulate", "--dgp", "garch-normal", "--case", "1", "--reps", "2", "--length", "200", "--seed", "7",
            "--out", d.path().to_str().unwrap(),
        ]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    for f in ["delta_summary.csv", "campaign_summary.csv", "simulate.json"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
    let csv = String::from_utf8(read(a.path(), "delta_summary.csv")).unwrap();
    assert!(csv.starts_with("case,moment,t,n,min,q1,median,q3,max,lower_whisker,upper_whisker,n_outliers,outliers\n"));
    assert_eq!(csv.lines().count(), 1 + 3 * 200);
}

#[test]
fn compute_outputs_and_config_round_trip() {
    let out = tempfile::tempdir().unwrap();
    let o = out.path().to_str().unwrap();
    let f = fixture();
    let mut args = vec!["compute", "--input", &f, "--out", o, "--seed", "11"];
    args.extend(QUICK);
    let r = Command::new(env!("CARGO_BIN_EXE_qcm"))
        .args(&args)
        .env("QCM_THREADS", "1")
        .output()
        .unwrap();
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let qcm_csv = String::from_utf8(read(out.path(), "qcm.csv")).unwrap();
    assert!(qcm_csv.starts_with("t,date,h,s,k,constraint_ok,n0\n1,2015-01-06,"));
    assert_eq!(qcm_csv.lines().count(), 1001);
    let dq = String::from_utf8(read(out.path(), "dq_report.csv")).unwrap();
    assert_eq!(dq.lines().count(), 1 + 2 * 19);
    for f in ["descriptive.csv", "qcm_stats.csv"] {
        assert!(out.path().join(f).exists(), "{f}");
    }

    let run: serde_json::Value = serde_json::from_slice(&read(out.path(), "run.json")).unwrap();
    let cfg: PipelineConfig = serde_json::from_value(run["config"].clone()).unwrap();
    assert_eq!(serde_json::to_value(&cfg).unwrap(), run["config"]);
    assert_eq!(cfg.seed, 11);
    assert_eq!(cfg.grid.len(), 19);
    assert_eq!(cfg.grid[2], 0.15);
    assert_eq!(run["summary"]["n"], 1000);
    assert!(run.get("timings").is_none());
}

#[test]
fn nic_runs_on_compute_output() {
    let out = tempfile::tempdir().unwrap();
    let o = out.path().to_str().unwrap();
    let f = fixture();
    let mut args = vec!["compute", "--input", &f, "--out", o];
    args.extend(QUICK);
    assert!(qcm(&args).status.success());
    let q = out.path().join("qcm.csv");
    let nic_dir = out.path().join("nic");
    let r = qcm(&[
        "nic", "--input", &f, "--qcm", q.to_str().unwrap(), "--tar-order", "2", "--out", nic_dir.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    for m in ["h", "s", "k"] {
        let c = String::from_utf8(read(&nic_dir, &format!("curves_{m}.csv"))).unwrap();
        assert_eq!(c.lines().count(), 202);
    }
    let adj = String::from_utf8(read(&nic_dir, "adj_r2.csv")).unwrap();
    assert!(adj.starts_with("moment,form,adj_r2\nh,quadratic,"));
    for f in ["nic_estimates.csv", "validity.csv", "nic.json"] {
        assert!(nic_dir.join(f).exists());
    }
    // A QCM file of the wrong length is a configuration error.
    let short = out.path().join("short.csv");
    let text = String::from_utf8(read(out.path(), "qcm.csv")).unwrap();
    let head: Vec<&str> = text.lines().take(500).collect();
    std::fs::write(&short, head.join("\n") + "\n").unwrap();
    let r = qcm(&["nic", "--input", &f, "--qcm", short.to_str().unwrap(), "--tar-order", "2", "--out", o]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn full_default_compute_on_fixture() {
    let out = tempfile::tempdir().unwrap();
    let r = qcm(&["compute", "--input", &fixture(), "--out", out.path().to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let qcm_csv = String::from_utf8(read(out.path(), "qcm.csv")).unwrap();
    assert_eq!(qcm_csv.lines().count() - 1, 1000);
    let dq = String::from_utf8(read(out.path(), "dq_report.csv")).unwrap();
    assert_eq!(dq.lines().count() - 1, 4 * 99);
}
