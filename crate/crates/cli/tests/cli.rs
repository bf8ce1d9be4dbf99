use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn qcnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qcnet")).current_dir(dir).args(args).env_remove("QCNET_THREADS").output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = qcnet(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

fn json(p: impl AsRef<Path>) -> Value {
    serde_json::from_slice(&read(p)).unwrap()
}

/// A model small enough to train in well under a second.
const TINY_MODEL: &str = r#"{"input_dims":[8,8,6],"growth_rate":2,"stem_channels":4,"stem_stride":2,
"num_dense_blocks":2,"layers_per_block":1,"transition_compression":0.5,"num_classes":2,"seed":0}"#;

fn synth(dir: &Path, out: &str, seed: &str) {
    ok(dir, &["synth", "--out", out, "--subjects", "6", "--volumes-per-subject", "3", "--dims", "12,12,8", "--artifact-rate", "0.5", "--seed", seed]);
}

fn train_tiny(dir: &Path, out: &str) {
    std::fs::write(dir.join("tiny.json"), TINY_MODEL).unwrap();
    ok(dir, &["train", "--manifest", "data/manifest.jsonl", "--val-manifest", "data/manifest.jsonl", "--model-config", "tiny.json", "--epochs", "2", "--out", out, "--history", "hist.json", "--seed", "3"]);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = qcnet(dir.path(), &["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(qcnet(dir.path(), &[]).status.code(), Some(1));
    assert_eq!(qcnet(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(qcnet(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(qcnet(dir.path(), &["infer", "--checkpoint", "m", "--out", "r"]).status.code(), Some(1), "needs a manifest or scans");
}

#[test]
fn bad_values_are_usage_errors_and_bad_files_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(qcnet(d, &["subset", "--manifest", "m.jsonl", "--fraction", "x", "--out", "o"]).status.code(), Some(1));
    assert_eq!(qcnet(d, &["synth", "--out", "o", "--artifact-rate", "2"]).status.code(), Some(1));
    assert_eq!(qcnet(d, &["synth", "--out", "o", "--kinds", "sparkles"]).status.code(), Some(1));
    let missing = qcnet(d, &["infer", "--checkpoint", "nope.qc3d", "--manifest", "m.jsonl", "--out", "r.json"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.qc3d"));
    std::fs::write(d.join("bad.jsonl"), "{not json\n").unwrap();
    assert_eq!(qcnet(d, &["subset", "--manifest", "bad.jsonl", "--fraction", "0.5", "--out", "o"]).status.code(), Some(2));
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "a", "5");
    synth(d, "b", "5");
    synth(d, "c", "6");
    for f in ["manifest.jsonl", "artifacts.jsonl", "sub-000.nii", "sub-005.nii", "sub-000.bval"] {
        assert_eq!(read(d.join("a").join(f)), read(d.join("b").join(f)), "{f}");
    }
    assert_ne!(read(d.join("a/sub-000.nii")), read(d.join("c/sub-000.nii")));
    let manifest = String::from_utf8(read(d.join("a/manifest.jsonl"))).unwrap();
    assert_eq!(manifest.lines().count(), 18);
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "data", "1");
    train_tiny(d, "m1.qc3d");
    train_tiny(d, "m2.qc3d");
    assert_eq!(read(d.join("m1.qc3d")), read(d.join("m2.qc3d")), "same seed, same checkpoint");
    assert_eq!(json(d.join("hist.json"))["train_loss"].as_array().unwrap().len(), 2);

    ok(d, &["infer", "--checkpoint", "m1.qc3d", "--manifest", "data/manifest.jsonl", "--threshold", "0.5", "--out", "r1.json", "--text", "r.txt", "--predictions", "preds.jsonl"]);
    ok(d, &["infer", "--checkpoint", "m1.qc3d", "--manifest", "data/manifest.jsonl", "--threshold", "0.5", "--out", "r2.json"]);
    assert_eq!(read(d.join("r1.json")), read(d.join("r2.json")));
    let report = json(d.join("r1.json"));
    assert_eq!(report["total_volumes"], 18);
    assert!(report["metrics"].is_object());
    let ps: Vec<f64> = report["volumes"].as_array().unwrap().iter().map(|v| v["p_artifact"].as_f64().unwrap()).collect();
    assert!(ps.windows(2).all(|w| w[0] >= w[1]));
    assert!(String::from_utf8(read(d.join("r.txt"))).unwrap().contains("Threshold: 0.5"));

    let eval = ok(d, &["eval", "--report", "r1.json", "--threshold", "0.15"]);
    let m: Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(m["threshold"], 0.15);
    let total = ["tp", "fp", "fn", "tn"].iter().map(|k| m[k].as_u64().unwrap()).sum::<u64>();
    assert_eq!(total, 18);
    // labels from a manifest give the same answer as labels in the report
    let eval2 = ok(d, &["eval", "--report", "r1.json", "--threshold", "0.15", "--labels", "data/manifest.jsonl"]);
    assert_eq!(eval.stdout, eval2.stdout);

    let sweep = ok(d, &["sweep", "--report", "r1.json"]);
    let csv = String::from_utf8(sweep.stdout).unwrap();
    assert!(csv.starts_with("threshold,precision,recall,accuracy,flagged\n"));
    let sweep2 = ok(d, &["sweep", "--predictions", "preds.jsonl"]);
    assert_eq!(csv, String::from_utf8(sweep2.stdout).unwrap());

    ok(d, &["subset", "--manifest", "data/manifest.jsonl", "--fraction", "0.2", "--out", "sub1.jsonl", "--seed", "4"]);
    ok(d, &["subset", "--manifest", "data/manifest.jsonl", "--fraction", "0.2", "--out", "sub2.jsonl", "--seed", "4"]);
    assert_eq!(read(d.join("sub1.jsonl")), read(d.join("sub2.jsonl")));
    assert_eq!(String::from_utf8(read(d.join("sub1.jsonl"))).unwrap().lines().count(), 4, "ceil(0.2 * 18)");

    ok(d, &["finetune", "--checkpoint", "m1.qc3d", "--manifest", "sub1.jsonl", "--epochs", "1", "--out", "ft1.qc3d"]);
    ok(d, &["finetune", "--checkpoint", "m1.qc3d", "--manifest", "sub1.jsonl", "--epochs", "1", "--out", "ft2.qc3d"]);
    assert_eq!(read(d.join("ft1.qc3d")), read(d.join("ft2.qc3d")));
    assert_ne!(read(d.join("ft1.qc3d")), read(d.join("m1.qc3d")));

    ok(d, &["infer", "--checkpoint", "m1.qc3d", "--scan", "data/sub-000.nii", "--scan", "data/sub-001.nii", "--out", "scans.json"]);
    let r = json(d.join("scans.json"));
    assert_eq!(r["total_volumes"], 6);
    assert!(r.get("metrics").is_none());
}

#[test]
fn config_file_supplies_flags_and_cli_wins() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("cfg.json"),
        r#"{"seed": 9, "synth": {"out": "from-config", "subjects": 2, "volumes_per_subject": 2, "dims": [12, 12, 8]},
            "train": {"epochs": 1}}"#,
    )
    .unwrap();
    ok(d, &["--config", "cfg.json", "synth"]);
    assert_eq!(String::from_utf8(read(d.join("from-config/manifest.jsonl"))).unwrap().lines().count(), 4);
    assert_eq!(json(d.join("from-config/generator.json"))["seed"], 9);

    ok(d, &["synth", "--config", "cfg.json", "--subjects", "3", "--seed", "2"]);
    assert_eq!(String::from_utf8(read(d.join("from-config/manifest.jsonl"))).unwrap().lines().count(), 6);
    assert_eq!(json(d.join("from-config/generator.json"))["seed"], 2);

    std::fs::write(d.join("bad.json"), r#"{"synth": {"no_such_flag": 1}}"#).unwrap();
    assert_eq!(qcnet(d, &["--config", "bad.json", "synth", "--out", "x"]).status.code(), Some(1));
}

#[test]
fn threads_flag_and_env() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--out", "t", "--subjects", "2", "--volumes-per-subject", "1", "--threads", "1"]);
    let out = Command::new(env!("CARGO_BIN_EXE_qcnet"))
        .current_dir(d)
        .args(["synth", "--out", "t", "--subjects", "2", "--volumes-per-subject", "1"])
        .env("QCNET_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

fn http(addr: &str, method: &str, path: &str, body: &str) -> (u16, String) {
    let mut s = TcpStream::connect(addr).unwrap();
    write!(s, "{method} {path} HTTP/1.1\r\nHost: x\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}", body.len()).unwrap();
    let mut resp = String::new();
    s.read_to_string(&mut resp).unwrap();
    let status = resp[9..12].parse().unwrap();
    let body = resp.split_once("\r\n\r\n").map(|x| x.1.to_string()).unwrap_or_default();
    (status, body)
}

/// Chunked responses: keep only the JSON payload.
fn json_body(raw: &str) -> Value {
    let start = raw.find(['{', '[']).unwrap();
    let end = raw.rfind(['}', ']']).unwrap();
    serde_json::from_str(&raw[start..=end]).unwrap()
}

struct Server(std::process::Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start_server(d: &Path) -> (Server, String) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_qcnet"))
        .current_dir(d)
        .args(["serve", "--predictions", "preds.jsonl", "--bind", "127.0.0.1:0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().rsplit("http://").next().unwrap().to_string();
    (Server(child), addr)
}

#[test]
fn served_metrics_match_eval_and_overrides_reach_the_export() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "data", "2");
    train_tiny(d, "m.qc3d");
    ok(d, &["infer", "--checkpoint", "m.qc3d", "--manifest", "data/manifest.jsonl", "--out", "r.json", "--predictions", "preds.jsonl"]);

    let (server, addr) = start_server(d);
    for t in ["0.15", "0.5"] {
        let (status, body) = http(&addr, "GET", &format!("/api/metrics?threshold={t}"), "");
        assert_eq!(status, 200);
        let eval = ok(d, &["eval", "--report", "r.json", "--threshold", t]);
        assert_eq!(json_body(&body), serde_json::from_slice::<Value>(&eval.stdout).unwrap(), "t = {t}");
    }
    let (status, _) = http(&addr, "POST", "/api/volumes/sub-000_vol-01/label", r#"{"label":"artifact"}"#);
    assert_eq!(status, 200);
    let (status, body) = http(&addr, "POST", "/api/finetune-set/export", "{}");
    assert_eq!(status, 200);
    let out = json_body(&body);
    assert_eq!(out["records"], 1);
    let exported = String::from_utf8(read(PathBuf::from(out["path"].as_str().unwrap()))).unwrap();
    assert!(exported.contains("\"label\":\"artifact\""));
    drop(server);

    // restart: the override is replayed from the journal
    let (_server, addr) = start_server(d);
    let (_, body) = http(&addr, "GET", "/api/volumes/sub-000_vol-01", "");
    assert_eq!(json_body(&body)["override"], "artifact");
}
