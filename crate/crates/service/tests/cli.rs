//! The `instqc` binary end to end: generate a corpus, train, evaluate,
//! report, scan, benchmark, then serve, kill and restart.

mod common;

use std::net::{SocketAddr, TcpListener};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use common::{multipart_body, request};
use instqc_core::augment::RECIPE_LEN;
use serde_json::Value;

const CONFIG: &str = "[preprocess]\ntarget_size = 32\n\n[training]\nepochs = 12\n";

fn instqc(args: &[&str], cwd: &Path) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_instqc"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "instqc {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn spawn_server(cwd: &Path, port: u16) -> Child {
    let port = port.to_string();
    Command::new(env!("CARGO_BIN_EXE_instqc"))
        .args(["serve", "--config", "config.toml", "--port", &port, "--store-dir", "store", "--model-dir", "models"])
        .current_dir(cwd)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap()
}

fn wait_ready(addr: SocketAddr) {
    let deadline = Instant::now() + Duration::from_secs(60);
    while std::net::TcpStream::connect(addr).is_err() {
        assert!(Instant::now() < deadline, "server did not start");
        std::thread::sleep(Duration::from_millis(50));
    }
}

#[test]
fn cli_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    std::fs::write(cwd.join("config.toml"), CONFIG).unwrap();
    let cfg = ["--config", "config.toml"];

    instqc(
        &[
            "generate", "--out", "corpus", "--per-cell", "6", "--size", "32", "--seed", "3",
            "--instruments", "scalpel,scissors", "--defects", "scratches,pores,nodefect",
        ],
        cwd,
    );
    let manifest = "corpus/manifest.jsonl";
    assert_eq!(std::fs::read_to_string(cwd.join(manifest)).unwrap().lines().count(), 36);

    instqc(&[&["train-baseline", manifest, "--model-dir", "models"][..], &cfg].concat(), cwd);
    for file in ["instrument.ckpt", "instrument.labels", "defect/scalpel.ckpt", "defect/scissors.labels"] {
        assert!(cwd.join("models").join(file).exists(), "{file}");
    }

    let eval = instqc(&[&["evaluate", manifest, "models", "--split", "train", "--csv", "metrics.csv"][..], &cfg].concat(), cwd);
    let report = stdout_json(&eval);
    assert_eq!(report["split"], "train");
    assert!(report["instrument"]["accuracy"].as_f64().unwrap() > 0.5);
    let csv = std::fs::read_to_string(cwd.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("stage,label,support,training_accuracy,testing_accuracy,precision,recall,f1,roc_auc"));
    assert!(csv.lines().any(|l| l.starts_with("instrument,macro,")));

    let chi2 = instqc(&["stats", "chi2", manifest], cwd);
    let chi2 = String::from_utf8(chi2.stdout).unwrap();
    assert!(chi2.lines().last().unwrap().starts_with("Overall Dataset,24,"), "{chi2}");

    let mut observations = String::from("instrument,adjustment,level,accuracy\n");
    for (level, base) in [("low", 0.7), ("mid", 0.8), ("high", 0.9)] {
        for k in 0..4 {
            observations += &format!("Carver,contrast,{level},{}\n", base + 0.01 * k as f64);
        }
    }
    std::fs::write(cwd.join("obs.csv"), observations).unwrap();
    instqc(&["stats", "anova", "obs.csv", "--out", "anova.csv"], cwd);
    let anova = std::fs::read_to_string(cwd.join("anova.csv")).unwrap();
    assert!(anova.starts_with("Instrument,Contrast (p-value)\nCarver,"), "{anova}");

    instqc(&["augment", manifest, "--out", "corpus/augmented.jsonl"], cwd);
    let augmented = std::fs::read_to_string(cwd.join("corpus/augmented.jsonl")).unwrap();
    assert_eq!(augmented.lines().count(), 36 * (RECIPE_LEN + 1));

    let first_images: Vec<String> = std::fs::read_to_string(cwd.join(manifest))
        .unwrap()
        .lines()
        .take(3)
        .map(|l| format!("corpus/{}", serde_json::from_str::<Value>(l).unwrap()["image_path"].as_str().unwrap()))
        .collect();
    let mut scan_args = vec!["scan", "--model-dir", "models", "--config", "config.toml"];
    scan_args.extend(first_images.iter().map(String::as_str));
    let scans = instqc(&scan_args, cwd);
    let lines: Vec<Value> = String::from_utf8(scans.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|l| l["result"]["instrument"]["kind"].is_string()));

    let bench = instqc(&[&["benchmark", manifest, "--model-dir", "models", "--warmup", "2"][..], &cfg].concat(), cwd);
    let stats = stdout_json(&bench);
    assert_eq!(stats["count"], 34);
    let (fps, mean) = (stats["fps"].as_f64().unwrap(), stats["mean_ms"].as_f64().unwrap());
    assert!((fps * mean - 1000.0).abs() < 1e-9);

    // Serve, submit, crash, restart: the listing must survive byte for byte.
    let port = free_port();
    let addr: SocketAddr = ([127, 0, 0, 1], port).into();
    let mut server = spawn_server(cwd, port);
    wait_ready(addr);
    for image in &first_images {
        let (ct, body) = multipart_body("image", "scan.png", &std::fs::read(cwd.join(image)).unwrap());
        assert_eq!(request(addr, "POST", "/api/scans", Some(&ct), &body).status, 201);
    }
    let before = request(addr, "GET", "/api/scans", None, &[]);
    let queue_before = request(addr, "GET", "/api/review-queue", None, &[]);
    server.kill().unwrap();
    server.wait().unwrap();

    let mut server = spawn_server(cwd, port);
    wait_ready(addr);
    let after = request(addr, "GET", "/api/scans", None, &[]);
    assert_eq!(after.status, 200);
    assert_eq!(after.body, before.body);
    assert_eq!(request(addr, "GET", "/api/review-queue", None, &[]).body, queue_before.body);
    server.kill().unwrap();
    server.wait().unwrap();
}

#[test]
fn bad_arguments_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_instqc"))
        .args(["evaluate", "missing.jsonl", "models"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    std::fs::write(dir.path().join("bad.toml"), "[pipeline]\nconfidence_threshold = 2.0\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_instqc"))
        .args(["--config", "bad.toml", "stats", "anova", "x.csv"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("confidence_threshold"));
}
