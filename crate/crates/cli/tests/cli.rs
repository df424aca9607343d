use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use curvcert::format::load_model;
use curvcert::linalg::{norm, NormKind};
use serde_json::Value;
use tempfile::TempDir;

fn curvcert(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curvcert"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(dir: &TempDir, name: &str, layers: &str, seed: u64, act: &str) -> PathBuf {
    let out = path(dir, name);
    let o = curvcert(&[
        "gen-fixture",
        "--layers",
        layers,
        "--seed",
        &seed.to_string(),
        "--activation",
        act,
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn run_json(args: &[&str], out: &Path) -> Value {
    let mut full = args.to_vec();
    full.extend(["--out", s(out)]);
    let o = curvcert(&full);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    json(out)
}

const TANH2: &str = r#"{
  "format_version": 1,
  "input_dim": 2,
  "blocks": [
    {"H": null, "G": null, "W": [[1.0, 0.0], [0.0, 1.0]], "activation": "tanh"},
    {"H": null, "G": null, "W": [[1.0, 0.0], [0.0, 1.0]], "activation": "tanh"}
  ],
  "metadata": {"name": "tanh2", "n_classes": 2}
}
"#;

#[test]
fn gen_fixture_is_deterministic_and_hits_the_weight_norm() {
    let dir = TempDir::new().unwrap();
    let a = fixture(&dir, "a.json", "3,8,8r,2", 7, "tanh");
    let b = fixture(&dir, "b.json", "3,8,8r,2", 7, "tanh");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let (file_a, net) = load_model(&a).unwrap();
    let (file_b, _) = load_model(&b).unwrap();
    assert_eq!(file_a.hash(), file_b.hash());
    for block in net.blocks() {
        assert!((norm(&block.w, NormKind::Two).unwrap() - 1.0).abs() < 1e-6);
    }
    let c = fixture(&dir, "c.json", "3,8,8r,2", 8, "tanh");
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn invalid_inputs_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let o = curvcert(&["gen-fixture", "--layers", "3,8,5r,2", "--out", s(&path(&dir, "x.json"))]);
    assert_eq!(code(&o), 2);

    let bad = path(&dir, "bad.json");
    fs::write(&bad, TANH2.replacen("\"tanh\"", "\"relu6\"", 1)).unwrap();
    let o = curvcert(&["lipschitz", "--model", s(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("blocks[0].activation"));

    let res = fixture(&dir, "res.json", "3,3r,2", 1, "tanh");
    let o = curvcert(&["curvature", "--model", s(&res), "--layer-method", "sdp"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("residual"));

    let data = path(&dir, "d.csv");
    fs::write(&data, "0.1,0.2,0\n").unwrap();
    let o = curvcert(&["certify", "--model", s(&res), "--data", s(&data)]);
    assert_eq!(code(&o), 2, "wrong feature count");
    fs::write(&data, "0.1,0.2,0.3,5\n").unwrap();
    let o = curvcert(&["certify", "--model", s(&res), "--data", s(&data)]);
    assert_eq!(code(&o), 2, "label out of range");
}

#[test]
fn verify_exit_codes() {
    let dir = TempDir::new().unwrap();
    let m = fixture(&dir, "m.json", "2,6,6r,3", 3, "sigmoid");
    let o = curvcert(&["verify", "--model", s(&m), "--pairs", "1000", "--seed", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("ratio"));

    let report = path(&dir, "v.json");
    let o = curvcert(&[
        "verify",
        "--model",
        s(&m),
        "--pairs",
        "1000",
        "--corrupt-bounds",
        "0.001",
        "--out",
        s(&report),
    ]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("violation") && err.contains("x = ["), "{err}");
    assert!(json(&report)["violations"].as_u64().unwrap() > 0);
}

#[test]
fn lipschitz_reports_and_anchored_note() {
    let dir = TempDir::new().unwrap();
    let one = fixture(&dir, "one.json", "3,2", 4, "tanh");
    let (_, net) = load_model(&one).unwrap();
    let r = run_json(
        &["lipschitz", "--model", s(&one), "--method", "liplt"],
        &path(&dir, "l.json"),
    );
    let want = curvcert::lipschitz::layer_lipschitz_lt(&net.blocks()[0], NormKind::Two).unwrap();
    assert_eq!(r["total"].as_f64().unwrap(), want);

    let m = fixture(&dir, "m.json", "3,8,8r,3", 4, "tanh");
    let data = path(&dir, "d.csv");
    let o = curvcert(&[
        "gen-fixture",
        "--layers",
        "3,8,8r,3",
        "--seed",
        "4",
        "--out",
        s(&path(&dir, "m2.json")),
        "--data-out",
        s(&data),
        "--samples",
        "5",
    ]);
    assert_eq!(code(&o), 0);
    for cmd in ["lipschitz", "curvature"] {
        let r = run_json(
            &[cmd, "--model", s(&m), "--anchor-data", s(&data), "--anchor-index", "2"],
            &path(&dir, "a.json"),
        );
        assert_eq!(r["anchored"], Value::Bool(true));
        assert!(r["total"].as_f64().unwrap() <= r["global_total"].as_f64().unwrap());
        assert!(r["note"].as_str().unwrap().contains("<="));
    }
}

#[test]
fn curvature_examples() {
    let dir = TempDir::new().unwrap();
    let affine = fixture(&dir, "aff.json", "3,4a,2", 2, "tanh");
    let r = run_json(&["curvature", "--model", s(&affine)], &path(&dir, "c.json"));
    assert_eq!(r["total"].as_f64().unwrap(), 0.0);

    let tanh2 = path(&dir, "tanh2.json");
    fs::write(&tanh2, TANH2).unwrap();
    let r = run_json(
        &["curvature", "--model", s(&tanh2), "--layer-method", "naive"],
        &path(&dir, "c.json"),
    );
    assert!((r["total"].as_f64().unwrap() - 1.539600).abs() < 1e-6);

    let ff = fixture(&dir, "ff.json", "3,8,6,2", 5, "softplus");
    let total = |method: &str| {
        run_json(
            &["curvature", "--model", s(&ff), "--layer-method", method],
            &path(&dir, "c.json"),
        )["total"]
            .as_f64()
            .unwrap()
    };
    let (sdp, vec, naive) = (total("sdp"), total("vectorized"), total("naive"));
    assert!(sdp <= vec && vec <= naive, "{sdp} {vec} {naive}");
}

#[test]
fn certify_and_attack_reports() {
    let dir = TempDir::new().unwrap();
    let m = path(&dir, "m.json");
    let data = path(&dir, "d.csv");
    let o = curvcert(&[
        "gen-fixture",
        "--layers",
        "2,8,8r,3",
        "--seed",
        "9",
        "--weight-norm",
        "2",
        "--out",
        s(&m),
        "--data-out",
        s(&data),
        "--samples",
        "30",
    ]);
    assert_eq!(code(&o), 0);
    // flip the first label so one record is misclassified
    let text = fs::read_to_string(&data).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let first = lines
        .iter()
        .position(|l| !l.starts_with('#') && l.chars().any(|c| c.is_ascii_digit()))
        .unwrap();
    let mut cells: Vec<String> = lines[first].split(',').map(str::to_string).collect();
    let label: usize = cells.last().unwrap().trim().parse().unwrap();
    *cells.last_mut().unwrap() = ((label + 1) % 3).to_string();
    lines[first] = cells.join(",");
    fs::write(&data, lines.join("\n") + "\n").unwrap();

    for norm in ["1", "2", "inf"] {
        let r = run_json(
            &["certify", "--model", s(&m), "--data", s(&data), "--norm", norm],
            &path(&dir, "c.json"),
        );
        let certs = r["certificates"].as_array().unwrap();
        assert_eq!(certs.len(), 30);
        assert_eq!(certs[0]["correct"], Value::Bool(false));
        assert_eq!(certs[0]["radius1"], Value::Null);
        assert!(!certs[0]["unbounded"].as_bool().unwrap());
        for (i, c) in certs.iter().enumerate() {
            assert_eq!(c["sample"].as_u64().unwrap(), i as u64);
        }
        let budgets: Vec<f64> = r["summary"]["budgets"]
            .as_array()
            .unwrap()
            .iter()
            .map(|b| b["budget"].as_f64().unwrap())
            .collect();
        assert_eq!(budgets, vec![36.0 / 255.0, 72.0 / 255.0, 108.0 / 255.0]);

        let a = run_json(
            &["attack-certify", "--model", s(&m), "--data", s(&data), "--norm", norm],
            &path(&dir, "a.json"),
        );
        let records = a["records"].as_array().unwrap();
        assert!(
            records.iter().any(|rec| rec["radius"].is_f64()),
            "no feasible attack at p={norm}"
        );
        for rec in records {
            if rec["radius"].is_f64() {
                assert_eq!(rec["realized"], Value::Bool(true));
            }
        }
        let clean = a["summary"]["clean_accuracy"].as_f64().unwrap();
        for row in a["summary"]["budgets"].as_array().unwrap() {
            let bound = row["robust_accuracy_upper_bound"].as_f64().unwrap();
            let frac = row["attackable_fraction"].as_f64().unwrap();
            assert!((bound - (clean - frac)).abs() < 1e-12);
        }
    }

    let o = curvcert(&["certify", "--model", s(&m), "--data", s(&data), "--budgets", "0.1,0.2"]);
    assert_eq!(code(&o), 0);
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["summary"]["budgets"].as_array().unwrap().len(), 2);
}

#[test]
fn shared_and_global_flags_conflict() {
    let dir = TempDir::new().unwrap();
    let m = fixture(&dir, "m.json", "2,4,2", 1, "tanh");
    let data = path(&dir, "d.csv");
    fs::write(&data, "0.1,0.2,0\n").unwrap();
    let o = curvcert(&[
        "certify",
        "--model",
        s(&m),
        "--data",
        s(&data),
        "--shared-bound",
        "--global",
    ]);
    assert_eq!(code(&o), 2);
}
