use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lcal(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcal"))
        .current_dir(dir)
        .env_remove("LCAL_THREADS")
        .args(["--threads", "1"])
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = lcal(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lcal(tmp.path(), &["eval", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(lcal(tmp.path(), &["fit", "--method", "nope", "--cal", "x", "--out", "y"]).status.code(), Some(1));
    assert_eq!(lcal(tmp.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(lcal(tmp.path(), &["--version"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(lcal(tmp.path(), &["eval", "--data", "missing.lcds"]).status.code(), Some(2));
    fs::write(tmp.path().join("junk.lcds"), b"not a dataset").unwrap();
    let out = lcal(tmp.path(), &["eval", "--data", "junk.lcds"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
    ok(tmp.path(), &["synth", "--out", "d.lcds", "--n", "200"]);
    let out = lcal(tmp.path(), &["split", "--data", "d.lcds", "--fractions", "a=0.5,b=0.6", "--out-dir", "p"]);
    assert_eq!(out.status.code(), Some(2));
    let out = lcal(tmp.path(), &["split", "--data", "d.lcds", "--fractions", "cal", "--out-dir", "p"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn calibrated_data_has_small_ece() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("spec.toml"), "generator = \"gaussian_mixture\"\nn = 40000\nseed = 3\n").unwrap();
    ok(tmp.path(), &["synth", "--spec", "spec.toml", "--out", "cal.lcds"]);
    ok(tmp.path(), &["eval", "--data", "cal.lcds", "--priors", "eval", "--report", "r.json"]);
    let r = json(&tmp.path().join("r.json"));
    for key in ["ece", "ecce", "lce", "mlce", "nll", "acc"] {
        assert!(r[key].is_f64(), "{key} missing");
    }
    assert!(r["ece"].as_f64().unwrap() < 0.01, "{}", r["ece"]);
}

#[test]
fn every_method_composes_fit_apply_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "--out", "d.lcds", "--n", "2400", "--seed", "5"]);
    ok(dir, &["split", "--data", "d.lcds", "--out-dir", "parts"]);
    for m in ["ts", "platt", "isotonic", "dirichlet", "lcn"] {
        let model = format!("{m}.json");
        let applied = format!("{m}.lcds");
        ok(dir, &["fit", "--method", m, "--cal", "parts/cal.lcds", "--out", &model, "--epochs", "3"]);
        assert_eq!(json(&dir.join(&model))["method"], m);
        ok(dir, &["apply", "--model", &model, "--data", "parts/test.lcds", "--out", &applied]);
        let out = ok(dir, &["eval", "--data", &applied, "--priors-from", "parts/cal.lcds", "--per-class"]);
        let r: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(r["per_class"]["ece"].as_array().unwrap().len(), 4, "{m}");
        assert!(r["acc"].as_f64().unwrap() > 0.5, "{m}");
    }
}

#[test]
fn manifest_records_digests_and_replay_detects_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "--out", "d.lcds", "--n", "500", "--seed", "1"]);
    ok(dir, &["fit", "--method", "ts", "--cal", "d.lcds", "--out", "ts.json"]);
    let m = json(&dir.join("ts.json.manifest.json"));
    assert_eq!(m["command"]["fit"]["method"], "ts");
    assert!(Path::new(m["command"]["fit"]["cal"].as_str().unwrap()).is_absolute());
    assert_eq!(m["threads"], 1);
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 1);

    ok(dir, &["replay", "--manifest", "ts.json.manifest.json"]);

    // outputs are regenerated, so a tampered model is overwritten and matches again
    fs::write(dir.join("ts.json"), "{}").unwrap();
    ok(dir, &["replay", "--manifest", "ts.json.manifest.json"]);
    assert_eq!(json(&dir.join("ts.json"))["method"], "ts");

    let mut forged = m.clone();
    forged["outputs"][0]["sha256"] = Value::String("0".repeat(64));
    fs::write(dir.join("forged.json"), serde_json::to_string(&forged).unwrap()).unwrap();
    let out = lcal(dir, &["replay", "--manifest", "forged.json"]);
    assert_eq!(out.status.code(), Some(3));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["identical"], false);

    ok(dir, &["synth", "--out", "d.lcds", "--n", "500", "--seed", "2"]);
    assert_eq!(lcal(dir, &["replay", "--manifest", "ts.json.manifest.json"]).status.code(), Some(2));
}

#[test]
fn stdout_reports_get_a_command_named_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["verify", "toy"]);
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["regions"].as_array().unwrap().len(), 6);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("p_cal = 0.6"), "{stderr}");
    let m = json(&tmp.path().join("lcal-verify-toy.manifest.json"));
    assert_eq!(m["stdout_sha256"].as_str().unwrap().len(), 64);
    ok(tmp.path(), &["replay", "--manifest", "lcal-verify-toy.manifest.json"]);
}

#[test]
fn thread_variable_overrides_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_lcal"))
        .current_dir(tmp.path())
        .env("LCAL_THREADS", "3")
        .args(["--threads", "1", "verify", "toy"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(json(&tmp.path().join("lcal-verify-toy.manifest.json"))["threads"], 3);
}

#[test]
fn report_numbers_have_at_most_12_significant_digits() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["synth", "--out", "d.lcds", "--n", "300"]);
    let out = ok(tmp.path(), &["verify", "thm5", "--data", "d.lcds"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for tok in text.split(|c: char| !(c.is_ascii_digit() || c == '.' || c == 'e' || c == '-')) {
        let mantissa = tok.split('e').next().unwrap();
        let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
        let significant = digits.trim_start_matches('0');
        assert!(significant.len() <= 12, "{tok}");
    }
}

#[test]
fn data_mode_estimates_tolerance_on_a_held_out_half() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "--out", "d.lcds", "--n", "800", "--seed", "4"]);
    let two = ok(dir, &["verify", "thm3", "--data", "d.lcds", "--gamma", "2"]);
    let one = ok(dir, &["verify", "thm3", "--data", "d.lcds", "--gamma", "2", "--single-split"]);
    let two: Value = serde_json::from_slice(&two.stdout).unwrap();
    let one: Value = serde_json::from_slice(&one.stdout).unwrap();
    assert_eq!(two["n"], 400);
    assert_eq!(one["n"], 800);
    let fixed = ok(dir, &["verify", "thm3", "--data", "d.lcds", "--epsilon", "0.25"]);
    let fixed: Value = serde_json::from_slice(&fixed.stdout).unwrap();
    assert_eq!(fixed["epsilon"], 0.25);
    assert_eq!(fixed["n"], 800);
}
