use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_loopbif");

const SMALL: &str = r#"
seed = 11

[domain]
n = 60

[weights]
a = "sin(3*3.141592653589793*x)"
b = "1"

[continuation]
eps_schedule = [1e-1, 1e-2, 1e-3]
"#;

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("RUST_LOG", "off").output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn usage_error_exits_one() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["loop"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn unknown_key_is_reported_with_section() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", &format!("{SMALL}epz0 = 0.1\n"));
    let out = run(&["validate", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unknown key epz0 in [continuation]"), "{err}");
    assert!(err.contains("line 13"), "{err}");
}

#[test]
fn supercritical_exponent_in_three_dimensions_fails_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "n3.toml",
        "[domain]\ndim = 3\nn = 10\n[weights]\na = \"1\"\nb = \"1\"\n[nonlinearity.g]\nfamily = \"pure_power\"\np = 6.0\n",
    );
    let out = run(&["validate", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["ok"], false);
    // solving commands refuse a 3D grid outright
    assert_eq!(run(&["eigen", &cfg]).status.code(), Some(1));
}

#[test]
fn validate_and_eigen_succeed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "s.toml", SMALL);
    let out = run(&["validate", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let out = run(&["eigen", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let levels = v["levels"].as_array().unwrap();
    assert_eq!(levels.len(), 3);
    assert!(levels[0]["lam_plus"].as_f64().unwrap() > 0.0);
    assert!(levels[0]["lam_minus"].as_f64().unwrap() < 0.0);
}

#[test]
fn loop_writes_outputs_and_replays_byte_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "s.toml", SMALL);
    let (d1, d2) = (tmp.path().join("r1"), tmp.path().join("r2"));
    for d in [&d1, &d2] {
        let out = run(&["loop", &cfg, "--out", d.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let csv1 = fs::read(d1.join("branches.csv")).unwrap();
    assert_eq!(csv1, fs::read(d2.join("branches.csv")).unwrap());
    let text = String::from_utf8(csv1).unwrap();
    assert!(text.starts_with(
        "branch_id,eps,step,s_arc,lambda,norm_inf,norm_h1,min_u,hopf_margin,positivity_class,turning,residual_inf\n"
    ));
    let diagram: serde_json::Value = serde_json::from_slice(&fs::read(d1.join("diagram.json")).unwrap()).unwrap();
    for key in ["eps_levels", "per_level", "loop_report", "hausdorff_sequence", "anomalies"] {
        assert!(diagram.get(key).is_some(), "missing {key}");
    }
    assert_eq!(diagram["loop_report"]["touches_origin"], true);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d1.join("report.json")).unwrap()).unwrap();
    // resolved config echoes defaults that the file left out
    assert_eq!(report["config"]["continuation"]["ds0"], 1e-2);
    assert_eq!(report["config"]["seed"], 11);
    let plot = fs::read_to_string(d1.join("plotdata.txt")).unwrap();
    assert_eq!(plot.split("\n\n").count(), 3);
}

#[test]
fn strict_promotes_warnings() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "s.toml", SMALL);
    let out = run(&["loop", &cfg, "--strict", "--out", tmp.path().join("o").to_str().unwrap()]);
    // the Hausdorff tail is still far above 1e-3 on three coarse levels
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "s.toml", SMALL);
    let out_dir = tmp.path().join("o");
    let out = run(&["trace", &cfg, "--seed", "99", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["seed"], 99);
    assert!(report["trace"]["mushroom_distance"].as_f64().unwrap() < 1e-3);
}

#[test]
fn qscan_rejects_nonzero_b() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "s.toml", SMALL);
    assert_eq!(run(&["qscan", &cfg]).status.code(), Some(2));
}
