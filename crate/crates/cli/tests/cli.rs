use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dirichlet-lab"));
    c.env_remove("DIRICHLET_LAB_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_trivial_circle_writes_complete_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "v.json", r#"{"kind": "validate", "space": {"family": "circle", "sizes": [16]}}"#);
    let out = dir.path().join("out");
    let o = run(&["validate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("PASS duality[0]"));
    assert!(!out.join(".partial").exists());

    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["all_passed"], Value::Bool(true));
    assert_eq!(summary["kind"], "validate");

    let manifest = json(&out.join("manifest.json"));
    let files = manifest["files"].as_object().unwrap();
    for name in ["config.json", "sector.csv", "summary.json", "checks.csv"] {
        let bytes = fs::read(out.join(name)).unwrap();
        assert_eq!(files[name], hex::encode(Sha256::digest(&bytes)), "{name}");
    }
    let compact = serde_json::to_string(&manifest["config"]).unwrap();
    assert_eq!(manifest["config_sha256"], hex::encode(Sha256::digest(compact.as_bytes())));
}

#[test]
fn misspelled_key_is_rejected_with_its_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.json",
        r#"{"kind": "validate", "space": {"family": "circle", "sizes": [16]},
            "coefficients": {"factory": "random", "lamda": 1.0}}"#,
    );
    let o = run(&["validate", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lamda"), "{}", stderr(&o));
    assert!(!dir.path().join("o").exists(), "no bundle for an invalid config");
}

#[test]
fn normalize_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "kind = \"tightness\"\n[space]\nfamily = \"interval\"\nsizes = [9, 17]\n[params]\nbeta = 2.0\n",
    );
    let once = run(&["normalize", "--config", &cfg]);
    assert_eq!(once.status.code(), Some(0), "{}", stderr(&once));
    let normalized = write(dir.path(), "n.json", &stdout(&once));
    let twice = run(&["normalize", "--config", &normalized]);
    assert_eq!(stdout(&once), stdout(&twice));
    let v: Value = serde_json::from_str(&stdout(&once)).unwrap();
    assert_eq!(v["params"]["beta"], 2.0);
    assert_eq!(v["params"]["mc_paths"], 20000);
    assert_eq!(v["space"]["length"], 1.0);
}

#[test]
fn rerun_is_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.json",
        r#"{"kind": "simulate", "seed": 11, "space": {"family": "circle", "sizes": [16]},
            "coefficients": {"factory": "random", "markov": true},
            "params": {"n_paths": 4000}}"#,
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let oa = bin().args(["simulate", "--config", &cfg, "--out", a.to_str().unwrap(), "--threads", "1"]).output().unwrap();
    let ob = bin()
        .args(["simulate", "--config", &cfg, "--out", b.to_str().unwrap()])
        .env("DIRICHLET_LAB_THREADS", "4")
        .output()
        .unwrap();
    assert_eq!(oa.status.code(), Some(0), "{}{}", stdout(&oa), stderr(&oa));
    assert_eq!(ob.status.code(), Some(0), "{}{}", stdout(&ob), stderr(&ob));
    let ma = json(&a.join("manifest.json"));
    let mb = json(&b.join("manifest.json"));
    assert_eq!(ma["files"], mb["files"]);
    assert_eq!(ma["config_sha256"], mb["config_sha256"]);
    for name in ["paths.csv", "occupation.csv", "martingale.csv", "lyons_zheng.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn seed_override_changes_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.json",
        r#"{"kind": "simulate", "space": {"family": "circle", "sizes": [8]}, "params": {"n_paths": 200}}"#,
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(
        run(&["simulate", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "5"]).status.code(),
        Some(0)
    );
    assert_ne!(fs::read(a.join("paths.csv")).unwrap(), fs::read(b.join("paths.csv")).unwrap());
    assert_eq!(json(&b.join("manifest.json"))["config"]["seed"], 5);
}

#[test]
fn stage_error_leaves_partial_marker() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "r.json",
        r#"{"kind": "validate", "space": {"family": "circle", "sizes": [8]},
            "coefficients": {"factory": "resolvent", "g": [1.0, 2.0, 3.0]}}"#,
    );
    let out = dir.path().join("o");
    let o = run(&["validate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let marker = fs::read_to_string(out.join(".partial")).unwrap();
    assert!(marker.contains("coefficients"), "{marker}");
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn failed_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "v.json",
        r#"{"kind": "validate", "space": {"family": "circle", "sizes": [16]},
            "tolerances": {"resolvent_identity": 1e-300}}"#,
    );
    let out = dir.path().join("o");
    let o = run(&["validate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("FAIL resolvent_identity[0]"));
    assert_eq!(json(&out.join("summary.json"))["all_passed"], Value::Bool(false));
    assert!(!out.join(".partial").exists());
}

#[test]
fn file_space_and_coefficients_resolve_relative_to_config() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "space.json",
        r#"{"ambient": {"coords": [[0.0], [1.0], [2.0]]}, "vertices": [0, 1, 2],
            "edges": [{"u": 0, "v": 1, "length": 1.0, "conductance": 1.0},
                      {"u": 1, "v": 2, "length": 1.0, "conductance": 1.0}],
            "measure": [0.5, 1.0, 0.5]}"#,
    );
    write(dir.path(), "coeffs.json", r#"{"a": 2.0, "lambda": 1.0, "c": [0.0, 0.5, 0.0]}"#);
    let cfg = write(
        dir.path(),
        "k.json",
        r#"{"kind": "conserve", "space": {"file": "space.json"},
            "coefficients": {"factory": "file", "path": "coeffs.json"},
            "params": {"r_grid": [0.5, 1.0, 1.5, 2.0]}, "out": "bundle"}"#,
    );
    let o = run(&["conserve", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("PASS strictly_sub_markov[0]"));
    assert!(dir.path().join("bundle/criterion.csv").exists());
}

#[test]
fn spectrum_matches_closed_forms() {
    let dir = tempfile::tempdir().unwrap();
    for family in ["circle", "interval", "torus"] {
        let cfg = write(
            dir.path(),
            &format!("{family}.toml"),
            &format!("[space]\nfamily = \"{family}\"\nsizes = [5, 9]\n[params]\nk_max = 20\n"),
        );
        let out = dir.path().join(family);
        let o = run(&["spectrum", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{family}: {}{}", stdout(&o), stderr(&o));
        assert_eq!(stdout(&o).matches("PASS spectrum_analytic").count(), 2, "{family}");
    }
}

#[test]
fn converge_on_refining_circles() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"kind": "converge", "space": {"family": "circle", "sizes": [8, 16, 32, 64], "limit": 256},
            "coefficients": {"factory": "resolvent"}}"#,
    );
    let out = dir.path().join("o");
    let o = run(&["converge", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let csv = fs::read_to_string(out.join("defects.csv")).unwrap();
    assert!(csv.starts_with("member_index,n_vertices,check_name,defect\n"));
    for check in ["s_defect", "r_defect", "fdd"] {
        assert_eq!(csv.lines().filter(|l| l.contains(&format!(",{check},"))).count(), 4, "{check}");
    }
}

#[test]
fn fdd_and_tightness_pass_on_markov_models() {
    let dir = tempfile::tempdir().unwrap();
    let fdd = write(
        dir.path(),
        "f.json",
        r#"{"kind": "fdd", "seed": 2, "space": {"family": "circle", "sizes": [8, 16]},
            "coefficients": {"factory": "random", "markov": true}}"#,
    );
    let o = run(&["fdd", "--config", &fdd, "--out", dir.path().join("f").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(dir.path().join("f/fdd_defects.csv").exists());

    let tight = write(
        dir.path(),
        "t.json",
        r#"{"kind": "tightness", "seed": 2, "space": {"family": "circle", "sizes": [32]},
            "params": {"mc_paths": 5000}}"#,
    );
    let out = dir.path().join("t");
    let o = run(&["tightness", "--config", &tight, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    for name in ["moments.csv", "modulus.csv", "kernels.csv"] {
        assert!(out.join(name).exists(), "{name}");
    }
}

#[test]
fn shipped_example_configs_pass() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let dir = tempfile::tempdir().unwrap();
    let mut ran = 0;
    for entry in fs::read_dir(&configs).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_string();
        if name.ends_with("_space.json") {
            continue;
        }
        let norm = run(&["normalize", "--config", path.to_str().unwrap()]);
        assert_eq!(norm.status.code(), Some(0), "{name}: {}", stderr(&norm));
        let v: Value = serde_json::from_str(&stdout(&norm)).unwrap();
        let kind = v["kind"].as_str().unwrap();
        let out = dir.path().join(&name);
        let o = run(&[kind, "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}{}", stdout(&o), stderr(&o));
        ran += 1;
    }
    assert!(ran >= 8, "only {ran} configs found");
}
