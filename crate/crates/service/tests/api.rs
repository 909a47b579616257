//! HTTP API behavior against a live server with gray-level stub models.

mod common;

use std::collections::BTreeSet;

use common::{gray_png, multipart_body, request, TestServer};
use instqc_core::dataset::read_records;
use serde_json::{json, Value};

const WHITE: u8 = 255;
const BLACK: u8 = 0;

fn scan_id(v: &Value) -> String {
    v["scan_id"].as_str().unwrap().to_string()
}

fn decision(instrument: &str, defect: &str) -> Value {
    json!({ "reviewer_id": "rev-1", "instrument": instrument, "defect": defect })
}

#[test]
fn confident_scan_is_final_and_retrievable() {
    let dir = tempfile::tempdir().unwrap();
    let server = TestServer::start(dir.path(), None);
    assert_eq!(server.get("/api/review-queue").json(), json!([]));
    assert_eq!(server.get("/api/scans").json(), json!([]));

    let png = gray_png(WHITE);
    let created = server.upload(&png);
    assert_eq!(created.status, 201, "{}", created.text());
    let record = created.json();
    assert_eq!(record["status"], "final");
    assert_eq!(record["result"]["instrument"]["kind"], "accepted");
    assert_eq!(record["result"]["instrument"]["label"], "Scalpel");
    assert_eq!(record["result"]["defect"]["label"], "Scratches");

    let id = scan_id(&record);
    assert_eq!(server.get(&format!("/api/scans/{id}")).json(), record);
    let image = server.get(&format!("/api/scans/{id}/image"));
    assert_eq!(image.header("content-type"), Some("image/png"));
    assert_eq!(image.body, png);
    assert_eq!(server.get("/api/review-queue").json(), json!([]));
}

#[test]
fn raw_png_bodies_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let server = TestServer::start(dir.path(), None);
    let r = request(server.addr, "POST", "/api/scans", Some("image/png"), &gray_png(WHITE));
    assert_eq!(r.status, 201);
}

#[test]
fn corrupt_upload_persists_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let server = TestServer::start(dir.path(), None);
    let events = dir.path().join("events.jsonl");
    let before = std::fs::read(&events).unwrap_or_default();

    let (ct, body) = multipart_body("image", "x.png", b"definitely not a png");
    let r = request(server.addr, "POST", "/api/scans", Some(&ct), &body);
    assert_eq!(r.status, 400);
    assert!(r.json()["error"].as_str().unwrap().contains("PNG"));
    let r = request(server.addr, "POST", "/api/scans", Some("multipart/form-data"), b"");
    assert_eq!(r.status, 400);
    let r = request(server.addr, "POST", "/api/scans", Some("image/png"), b"");
    assert_eq!(r.status, 400);

    assert_eq!(std::fs::read(&events).unwrap_or_default(), before);
    let images = dir.path().join("images");
    assert!(!images.exists() || std::fs::read_dir(images).unwrap().next().is_none());
    assert_eq!(server.store.snapshot().scans().count(), 0);
}

#[test]
fn queue_holds_flagged_scans_in_submission_order() {
    let dir = tempfile::tempdir().unwrap();
    let server = TestServer::start(dir.path(), None);
    let mut flagged = Vec::new();
    for i in 0..7u8 {
        // Levels below 42 leave the instrument stage under threshold.
        let level = if i % 2 == 0 { i * 5 } else { 200 + i };
        let r = server.upload(&gray_png(level)).json();
        if i % 2 == 0 {
            assert_eq!(r["status"], "awaiting_review");
            flagged.push(scan_id(&r));
        } else {
            assert_eq!(r["status"], "final");
        }
    }
    let queue = server.get("/api/review-queue").json();
    let ids: Vec<String> = queue.as_array().unwrap().iter().map(scan_id).collect();
    assert_eq!(ids, flagged);
    let first = &queue[0];
    assert_eq!(first["image_url"], format!("/api/scans/{}/image", flagged[0]));
    assert_eq!(first["instrument"]["kind"], "flagged_for_review");
    assert_eq!(first["instrument_top"][0]["label"], "Scalpel");
    assert!(first["defect"].is_null());
}

#[test]
fn decisions_validate_and_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let server = TestServer::start(dir.path(), None);
    let id = scan_id(&server.upload(&gray_png(BLACK)).json());
    let final_id = scan_id(&server.upload(&gray_png(WHITE)).json());
    let path = format!("/api/review-queue/{id}/decision");

    let unknown = "/api/review-queue/00000000-0000-4000-8000-000000000000/decision";
    assert_eq!(server.post_json(unknown, &decision("Scalpel", "Scratches")).status, 404);
    assert_eq!(server.post_json(&path, &decision("Spoon", "Scratches")).status, 422);
    assert_eq!(server.post_json(&path, &json!({ "reviewer_id": "r", "instrument": "Scalpel" })).status, 422);
    let misc = server.post_json(&path, &decision("Miscellaneous", "Scratches"));
    assert_eq!(misc.status, 422, "{}", misc.text());
    assert_eq!(server.post_json(&path, &json!({ "reviewer_id": " ", "instrument": "Scalpel", "defect": "Pores" })).status, 422);
    let r = request(server.addr, "POST", &path, Some("application/json"), b"{not json");
    assert_eq!(r.status, 400);
    assert!(r.json()["error"].is_string());
    let final_path = format!("/api/review-queue/{final_id}/decision");
    assert_eq!(server.post_json(&final_path, &decision("Scalpel", "Pores")).status, 409);

    let ok = server.post_json(&path, &decision("Scalpel", "Pores"));
    assert_eq!(ok.status, 200, "{}", ok.text());
    let record = ok.json();
    assert_eq!(record["status"], "reviewed");
    assert_eq!(record["review"]["decision"]["decided_defect"], "Pores");

    let again = server.post_json(&path, &decision("Scalpel", "Pores"));
    assert_eq!(again.status, 409);
    assert_eq!(again.json()["detail"], record);

    let manifest = read_records(&dir.path().join("review_manifest.jsonl")).unwrap();
    assert_eq!(manifest.len(), 1);
    assert_eq!(manifest[0].record_id, format!("review-{id}"));
    assert_eq!(server.get("/api/review-queue").json(), json!([]));
}

#[test]
fn reviewer_instrument_reruns_the_defect_stage() {
    let dir = tempfile::tempdir().unwrap();
    let server = TestServer::start(dir.path(), None);
    let id = scan_id(&server.upload(&gray_png(BLACK)).json());
    let record = server
        .post_json(&format!("/api/review-queue/{id}/decision"), &decision("Scissors", "NoDefect"))
        .json();
    let rerun = &record["review"]["defect_rerun"];
    assert_eq!(rerun["instrument"], "Scissors");
    // Black input scores 0.4 on Scratches, which maps to no defect.
    assert_eq!(rerun["disposition"]["kind"], "no_defect_detected");
    assert_eq!(rerun["top"][0]["label"], "Scratches");

    let id = scan_id(&server.upload(&gray_png(BLACK)).json());
    let record = server
        .post_json(&format!("/api/review-queue/{id}/decision"), &decision("Miscellaneous", "NoDefect"))
        .json();
    assert!(record["review"]["defect_rerun"].is_null());
}

#[test]
fn metrics_score_pipeline_against_reviewers() {
    let dir = tempfile::tempdir().unwrap();
    let server = TestServer::start(dir.path(), None);
    let empty = server.get("/api/reports/metrics").json();
    assert_eq!(empty["reviewed"], 0);
    assert!(empty["instrument"].is_null());

    let id = scan_id(&server.upload(&gray_png(BLACK)).json());
    // The pipeline leaned Scalpel and the re-run found no defect.
    server.post_json(&format!("/api/review-queue/{id}/decision"), &decision("Scalpel", "NoDefect"));
    let m = server.get("/api/reports/metrics").json();
    assert_eq!(m["reviewed"], 1);
    assert_eq!(m["instrument"]["accuracy"], 1.0);
    assert_eq!(m["defect"]["accuracy"], 1.0);

    let id = scan_id(&server.upload(&gray_png(BLACK)).json());
    server.post_json(&format!("/api/review-queue/{id}/decision"), &decision("Scissors", "Pores"));
    let m = server.get("/api/reports/metrics").json();
    assert_eq!(m["reviewed"], 2);
    assert_eq!(m["instrument"]["accuracy"], 0.5);
    assert_eq!(m["defect"]["accuracy"], 0.5);
}

#[test]
fn scan_failures_are_audited() {
    let dir = tempfile::tempdir().unwrap();
    let server = TestServer::start(dir.path(), None);
    let r = server.upload(&gray_png(common::FAILING_GRAY));
    assert_eq!(r.status, 500);
    let body = r.json();
    assert_eq!(body["detail"]["stage"], "instrument");
    let state = server.store.snapshot();
    assert_eq!(state.failures().count(), 1);
    assert_eq!(state.scans().count(), 0);
}

#[test]
fn lookups_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let server = TestServer::start(dir.path(), None);
    assert_eq!(server.get("/api/health").json()["status"], "ok");
    assert_eq!(server.get("/api/scans/00000000-0000-4000-8000-000000000000").status, 404);
    assert_eq!(server.get("/api/scans/not-a-uuid").status, 400);
    assert_eq!(server.get("/api/scans/00000000-0000-4000-8000-000000000000/image").status, 404);

    let labels = server.get("/api/labels").json();
    assert_eq!(labels["instruments"].as_array().unwrap().len(), 12);
    assert_eq!(labels["defects"].as_array().unwrap().len(), 6);
    assert_eq!(labels["instruments"][11], "Miscellaneous");
    assert_eq!(labels["defects"][5], "NoDefect");
    assert_eq!(labels["confidence_threshold"], 0.5);

    let missing = server.get("/api/nothing-here");
    assert_eq!(missing.status, 404);
    assert!(missing.json()["error"].is_string());
    assert_eq!(server.get("/index.html").status, 404, "no UI directory configured");
}

#[test]
fn static_ui_files() {
    let dir = tempfile::tempdir().unwrap();
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<!doctype html><title>review</title>").unwrap();
    std::fs::create_dir(ui.path().join("assets")).unwrap();
    std::fs::write(ui.path().join("assets/app.js"), "console.log(1)").unwrap();
    std::fs::write(dir.path().join("secret.txt"), "s").unwrap();
    let server = TestServer::start(dir.path(), Some(ui.path()));

    let index = server.get("/");
    assert_eq!(index.status, 200);
    assert!(index.header("content-type").unwrap().starts_with("text/html"));
    assert!(index.text().contains("review"));
    let js = server.get("/assets/app.js");
    assert!(js.header("content-type").unwrap().starts_with("text/javascript"));
    assert_eq!(js.text(), "console.log(1)");
    assert_eq!(server.get("/assets/missing.js").status, 404);
    assert_eq!(server.get("/../secret.txt").status, 404);
    assert_eq!(server.get("/%2e%2e/secret.txt").status, 404);
}

#[test]
fn concurrent_submissions_keep_the_queue_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let server = TestServer::start(dir.path(), None);
    let addr = server.addr;
    let handles: Vec<_> = (0..12u8)
        .map(|i| {
            std::thread::spawn(move || {
                let (ct, body) = multipart_body("image", "s.png", &gray_png(if i % 3 == 0 { 10 } else { 220 }));
                request(addr, "POST", "/api/scans", Some(&ct), &body).json()
            })
        })
        .collect();
    let records: Vec<Value> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    let awaiting: BTreeSet<String> = records
        .iter()
        .filter(|r| r["status"] == "awaiting_review")
        .map(scan_id)
        .collect();
    assert_eq!(awaiting.len(), 4);
    let queued: BTreeSet<String> = server.get("/api/review-queue").json().as_array().unwrap().iter().map(scan_id).collect();
    assert_eq!(queued, awaiting);

    let sequences: BTreeSet<u64> = server
        .get("/api/scans")
        .json()
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["sequence"].as_u64().unwrap())
        .collect();
    assert_eq!(sequences.len(), 12);
}
