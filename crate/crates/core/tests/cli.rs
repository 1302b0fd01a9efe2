use std::process::Command;

fn tspbmc(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_tspbmc"))
        .args(args)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

#[test]
fn fair_check_is_safe() {
    let (code, out, _) = tspbmc(&["check", "nspkt", "fair", "--sessions", "1"]);
    assert_eq!(code, 0);
    assert!(out.contains("no attack up to bound 6"), "{out}");
}

#[test]
fn mitm_check_writes_html() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.html");
    let (code, out, _) = tspbmc(&[
        "check", "nspkt", "mitm1_lowe", "--sessions", "2", "--format", "html", "--out",
        w.to_str().unwrap(),
    ]);
    assert_eq!(code, 10, "{out}");
    let html = std::fs::read_to_string(&w).unwrap();
    assert!(html.starts_with("<!DOCTYPE html>"));
    assert_eq!(html.matches("<tr").count(), 1 + 6);
    assert!(!html.contains("<script") && !html.contains("http"));
    // Final row shows I gaining the secret.
    let last = html.rsplit("<tr class=\"goal\">").next().unwrap();
    assert!(last.contains("+Tb#1"), "{last}");
}

#[test]
fn json_witness_goes_to_stdout() {
    let (code, out, err) = tspbmc(&["check", "nspkt", "mitm1_lowe", "--format", "json"]);
    assert_eq!(code, 10);
    assert!(err.contains("attack found at bound 6"));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["bound"], 6);
    assert_eq!(v["goal"]["known_by_intruder"], true);
}

#[test]
fn oracle_agrees_on_examples() {
    assert_eq!(tspbmc(&["oracle", "nspkt", "fair", "--sessions", "1", "--depth", "6"]).0, 0);
    assert_eq!(tspbmc(&["oracle", "nspkt", "mitm1_lowe", "--sessions", "2"]).0, 10);
    assert_eq!(tspbmc(&["oracle", "nspkt", "fair", "--depth", "0"]).0, 2);
}

#[test]
fn input_errors_exit_2() {
    assert_eq!(tspbmc(&["check", "missing.ab", "fair"]).0, 2);
    assert_eq!(tspbmc(&["check", "nspkt", "nosuch"]).0, 2);
    assert_eq!(tspbmc(&["encode", "nspkt", "fair", "--bound", "0"]).0, 2);
    assert_eq!(tspbmc(&["frobnicate"]).0, 2);
    assert_eq!(tspbmc(&["check", "nspkt", "fair", "--max-bound", "0"]).0, 2);
    // Override names session 2 but only one session requested.
    assert_eq!(tspbmc(&["dump-model", "nspkt", "mitm1_lowe", "--sessions", "1"]).0, 2);
}

#[test]
fn missing_solver_is_inconclusive() {
    let (code, out, _) = tspbmc(&["check", "nspkt", "fair", "--solver", "/nonexistent/z3"]);
    assert_eq!(code, 3, "{out}");
}

#[test]
fn encode_and_dump_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("a.smt2");
    let args = ["encode", "nspkt", "fair", "--sessions", "1", "--bound", "3", "--out", f.to_str().unwrap()];
    assert_eq!(tspbmc(&args).0, 0);
    let first = std::fs::read(&f).unwrap();
    assert_eq!(tspbmc(&args).0, 0);
    assert_eq!(first, std::fs::read(&f).unwrap());
    assert!(first.starts_with(b"; bounded reachability, bound 3\n"));

    let (c1, a, _) = tspbmc(&["dump-model", "nspkt", "fair", "--sessions", "1"]);
    let (c2, b, _) = tspbmc(&["dump-model", "nspkt", "fair", "--sessions", "1"]);
    assert_eq!((c1, c2), (0, 0));
    assert_eq!(a, b);
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["exec_steps"].as_array().unwrap().len(), 3);
}

#[test]
fn library_protocol_with_custom_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("mine.json");
    std::fs::write(&s, r#"{"name":"mine","overrides":[],"eavesdrop":false}"#).unwrap();
    let (code, _, _) = tspbmc(&["encode", "nspkt", s.to_str().unwrap(), "--bound", "2"]);
    assert_eq!(code, 0);
}

#[test]
fn list_and_export() {
    let (code, out, _) = tspbmc(&["list"]);
    assert_eq!(code, 0);
    assert!(out.contains("nspkt: fair, mitm1_lowe"));
    assert!(out.lines().any(|l| l.starts_with("wmf:") && l.contains("replay")));
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(tspbmc(&["list", "--export", dir.path().to_str().unwrap()]).0, 0);
    let ab = dir.path().join("nspkt.ab");
    let sc = dir.path().join("nspkt.mitm1_lowe.json");
    assert!(ab.is_file() && sc.is_file());
    // Exported files work as path arguments.
    let (code, _, _) = tspbmc(&["oracle", ab.to_str().unwrap(), sc.to_str().unwrap()]);
    assert_eq!(code, 10);
}
