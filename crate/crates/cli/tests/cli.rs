use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cpf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn bundled_json() -> serde_json::Value {
    serde_json::from_str(include_str!("../../core/scenarios/paper_q100.json")).unwrap()
}

fn write_json(dir: &Path, name: &str, v: &serde_json::Value) -> String {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string(v).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

fn stdout_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("json on stdout")
}

#[test]
fn check_accepts_bundled_scenarios() {
    for name in ["paper_q100", "paper_q01", "fixed_point", "consensus_spread"] {
        let o = cpf(&["check", "--scenario", name]);
        assert_eq!(o.status.code(), Some(0), "{name}");
    }
}

#[test]
fn invalid_gain_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = bundled_json();
    doc["graph"]["eps_bar"] = 0.6.into();
    doc["timing"].as_object_mut().unwrap().remove("delta_lb");
    let f = write_json(dir.path(), "bad.json", &doc);
    let o = cpf(&["check", "--scenario", &f]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("graph.eps_bar"), "{err}");
    assert!(err.contains("timing.delta_lb"), "{err}");
}

#[test]
fn malformed_document_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("m.json");
    fs::write(&f, "{ not json").unwrap();
    assert_eq!(
        cpf(&["check", "--scenario", f.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn unknown_scenario_is_a_plain_error() {
    let o = cpf(&["check", "--scenario", "no_such_scenario"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("paper_q100"));
}

#[test]
fn run_writes_outputs_and_diag_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = cpf(&[
        "run",
        "--scenario",
        "consensus_spread",
        "--duration",
        "3",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let summary = stdout_json(&o);
    assert_eq!(summary["t_final"], 3.0);
    assert_eq!(summary["mode"], "consensus");
    for f in [
        "trace.csv",
        "samples.csv",
        "positions.dat",
        "series.dat",
        "summary.json",
        "scenario.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let csv = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(csv.starts_with("t,agent,px,py,pz,r11,"));

    let d = cpf(&["diag", "--trace", out.to_str().unwrap()]);
    assert_eq!(d.status.code(), Some(0));
    let report = stdout_json(&d);
    assert_eq!(report["iss"]["checked"], 29);
    assert_eq!(report["iss"]["failed"].as_array().unwrap().len(), 0);
}

#[test]
fn mode_flag_overrides_the_scenario() {
    let o = cpf(&[
        "run",
        "--scenario",
        "paper_q100",
        "--mode",
        "decoupled",
        "--duration",
        "0.5",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout_json(&o)["mode"], "decoupled");
}

#[test]
fn compare_reports_q_independent_decoupled_gamma() {
    let o = cpf(&[
        "compare",
        "--scenario",
        "paper_q100",
        "--mode",
        "decoupled",
        "--against",
        "paper_q01",
        "--against-mode",
        "decoupled",
        "--duration",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout_json(&o)["gamma_bitwise_equal"], true);
}

#[test]
fn infeasible_run_exits_with_code_three_and_keeps_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = bundled_json();
    doc["mpc"]["y_box"] = serde_json::json!([0.01, 0.01, 0.01]);
    doc["mpc"]["solver"]["max_iters"] = 5.into();
    doc["mpc"]["solver"]["max_penalty_rounds"] = 1.into();
    let f = write_json(dir.path(), "tight.json", &doc);
    let out = dir.path().join("out");
    let o = cpf(&[
        "run",
        "--scenario",
        &f,
        "--duration",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("infeasible"));
    assert!(stdout_json(&o)["abort"].is_object());
    assert!(out.join("trace.csv").exists());
}
