use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_specmosaic");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env("SPECMOSAIC_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = run(dir, args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    o
}

const FLAT: &str = r#"
output_dir = "out"
seeds = [1]
sigmas = [0.0, 0.05]

[scene]
kind = "flat"
width = 96
height = 96
value = 0.5

[render]
strip = "global"
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("exp.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn manifest(dir: &Path, stage: &str) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("out").join(format!("{stage}.json"))).unwrap()).unwrap()
}

fn chain(dir: &Path) {
    for stage in ["simulate", "decode", "reconstruct", "eval"] {
        ok(dir, &[stage, "-c", "exp.toml"]);
    }
}

#[test]
fn full_chain_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), FLAT);
    chain(tmp.path());
    for stage in ["simulate", "decode", "reconstruct", "eval"] {
        let m = manifest(tmp.path(), stage);
        assert_eq!(m["stage"], stage);
        for a in m["artifacts"].as_array().unwrap() {
            let p = tmp.path().join("out").join(a["path"].as_str().unwrap());
            assert!(p.is_file(), "{} missing", p.display());
        }
    }
    let recon = manifest(tmp.path(), "reconstruct");
    let kinds: Vec<&str> = recon["artifacts"].as_array().unwrap().iter().map(|a| a["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds.iter().filter(|&&k| k == "cube").count(), 2);
    assert_eq!(kinds.iter().filter(|&&k| k == "srgb").count(), 2);
    assert_eq!(kinds.iter().filter(|&&k| k == "strip").count(), 2);

    let csv = std::fs::read_to_string(tmp.path().join("out/metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("sigma_pct,seed,psnr_db,ssim,mae,sam_deg"));
    let noiseless: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(noiseless[0], 0.0);
    assert!(noiseless[2] > 40.0, "flat gray PSNR {}", noiseless[2]);
}

#[test]
fn rerun_reproduces_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), FLAT);
    chain(tmp.path());
    let first: Vec<Value> = ["simulate", "decode", "reconstruct", "eval"].iter().map(|s| manifest(tmp.path(), s)).collect();
    chain(tmp.path());
    let second: Vec<Value> = ["simulate", "decode", "reconstruct", "eval"].iter().map(|s| manifest(tmp.path(), s)).collect();
    assert_eq!(first, second);
}

#[test]
fn stale_manifest_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), FLAT);
    ok(tmp.path(), &["simulate", "-c", "exp.toml"]);
    write_config(tmp.path(), &FLAT.replace("value = 0.5", "value = 0.25"));
    let o = run(tmp.path(), &["decode", "-c", "exp.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("different config"), "{}", stderr(&o));
}

#[test]
fn tampered_artifact_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), FLAT);
    ok(tmp.path(), &["simulate", "-c", "exp.toml"]);
    let m = manifest(tmp.path(), "simulate");
    let frame = m["artifacts"].as_array().unwrap().iter().find(|a| a["kind"] == "frame").unwrap();
    let path = tmp.path().join("out").join(frame["path"].as_str().unwrap());
    let mut bytes = std::fs::read(&path).unwrap();
    *bytes.last_mut().unwrap() ^= 1;
    std::fs::write(&path, bytes).unwrap();
    let o = run(tmp.path(), &["decode", "-c", "exp.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("changed since"), "{}", stderr(&o));
}

#[test]
fn help_lists_subcommands() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ok(tmp.path(), &["--help"]);
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["simulate", "decode", "reconstruct", "eval", "calibrate", "bench", "render"] {
        assert!(text.contains(cmd), "--help lacks {cmd}");
    }
}

#[test]
fn usage_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(tmp.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(tmp.path(), &["simulate"]).status.code(), Some(1));
    assert_eq!(run(tmp.path(), &["eval", "--reference", "a.lmsc"]).status.code(), Some(1));
}

#[test]
fn missing_scene_file_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(
        tmp.path(),
        "output_dir = \"out\"\nseeds = [0]\n[scene]\nkind = \"cube\"\npath = \"nowhere.lmsc\"\n",
    );
    let o = run(tmp.path(), &["simulate", "-c", "exp.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.lmsc"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), &format!("{FLAT}\n[solver]\nlambdda = 1.0\n"));
    let o = run(tmp.path(), &["simulate", "-c", "exp.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lambdda"), "{}", stderr(&o));
}

#[test]
fn eval_pair_dimension_mismatch_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), FLAT);
    ok(tmp.path(), &["simulate", "-c", "exp.toml"]);
    write_config(tmp.path(), &FLAT.replace("output_dir = \"out\"", "output_dir = \"small\"").replace("height = 96", "height = 72"));
    ok(tmp.path(), &["simulate", "-c", "exp.toml"]);
    let o = run(
        tmp.path(),
        &["eval", "--reference", "out/truth/frame000.lmsc", "--test", "small/truth/frame000.lmsc"],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = ok(
        tmp.path(),
        &["eval", "--reference", "out/truth/frame000.lmsc", "--test", "out/truth/frame000.lmsc"],
    );
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["mae"], 0.0);
}

#[test]
fn calibrate_recovers_synthetic_gains() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), &format!("{FLAT}\n[calibration]\nsigma = 0.0\nseed = 7\n"));
    let o = ok(tmp.path(), &["calibrate", "-c", "exp.toml"]);
    let text = String::from_utf8_lossy(&o.stdout);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("led,alpha_fit,alpha_true,rel_error"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 12);
    for row in rows {
        let err: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!(err < 1e-6, "{row}");
    }
    let again = ok(tmp.path(), &["calibrate", "-c", "exp.toml", "--responses", "out/calibration/responses.csv"]);
    assert!(String::from_utf8_lossy(&again.stdout).starts_with("led,alpha_fit\n"));
}

#[test]
fn render_writes_png() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), FLAT);
    ok(tmp.path(), &["simulate", "-c", "exp.toml"]);
    ok(
        tmp.path(),
        &["render", "out/truth/frame000.lmsc", "-o", "rgb.png", "--illuminant", "d65", "--strip", "strip.png"],
    );
    for name in ["rgb.png", "strip.png"] {
        let bytes = std::fs::read(tmp.path().join(name)).unwrap();
        assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");
    }
}

#[test]
fn unregularised_solver_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), &FLAT.replace("[render]", "[solver]\nlambda = 0.0\nmu = 0.0\n\n[render]"));
    let o = run(tmp.path(), &["simulate", "-c", "exp.toml"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("singular"), "{}", stderr(&o));
}
