//! Runs models exported by an independent toolchain (see
//! `fixtures/generate.py`) and compares against the reference outputs it
//! recorded.

use std::path::{Path, PathBuf};

use instqc_core::imaging::{Channels, NormalizedTensor};
use instqc_core::model::{write_label_file, ClassifierBackend, ModelError};
use instqc_onnx::{load_external_backend, OnnxBackend, OnnxError};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn expected(key: &str) -> Vec<f64> {
    let text = std::fs::read_to_string(fixture("expected.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    json[key].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect()
}

/// The generator's input: ((7x + 13y + 29c) mod 256) / 255, interleaved RGB.
fn pattern(size: u32) -> NormalizedTensor {
    let mut values = Vec::new();
    for y in 0..size {
        for x in 0..size {
            for c in 0..3 {
                values.push(((7 * x + 13 * y + 29 * c) % 256) as f64 / 255.0);
            }
        }
    }
    NormalizedTensor::new(size, size, Channels::Rgb, values.into_iter().map(|v| v as f32).collect()).unwrap()
}

fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("class{i}")).collect()
}

fn assert_close(actual: &[f64], expected: &[f64]) {
    assert_eq!(actual.len(), expected.len());
    for (a, e) in actual.iter().zip(expected) {
        assert!((a - e).abs() < 1e-5, "{actual:?} vs {expected:?}");
    }
}

#[test]
fn convolutional_model_matches_reference() {
    let backend = OnnxBackend::load(&fixture("small_cnn.onnx"), labels(4)).unwrap();
    assert_eq!(backend.input_size(), Some((32, 32)));
    let probs = backend.predict(&pattern(32)).unwrap();
    assert_close(probs.probabilities(), &expected("small_cnn"));
}

#[test]
fn logit_head_is_softmaxed() {
    let backend = OnnxBackend::load(&fixture("head_8.onnx"), labels(5)).unwrap();
    let raw = backend.scores(&pattern(8)).unwrap();
    let sum: f32 = raw.iter().sum();
    assert!((sum - 1.0).abs() > 1e-3, "fixture should emit logits");
    let probs = backend.predict(&pattern(8)).unwrap();
    assert_close(probs.probabilities(), &expected("head_8"));
}

#[test]
fn gray_input_is_replicated() {
    let backend = OnnxBackend::load(&fixture("head_8.onnx"), labels(5)).unwrap();
    let gray = NormalizedTensor::new(8, 8, Channels::Gray, vec![0.5; 64]).unwrap();
    let rgb = NormalizedTensor::new(8, 8, Channels::Rgb, vec![0.5; 192]).unwrap();
    assert_eq!(backend.predict(&gray).unwrap(), backend.predict(&rgb).unwrap());
}

#[test]
fn external_loader_checks_declared_size() {
    let dir = tempfile::tempdir().unwrap();
    let label_path = dir.path().join("labels.txt");
    write_label_file(&label_path, &labels(5)).unwrap();

    let ok = load_external_backend(&fixture("head_1024.onnx"), &label_path, 1024).unwrap();
    assert_eq!(ok.input_size(), Some((1024, 1024)));

    let err = load_external_backend(&fixture("head_640.onnx"), &label_path, 1024).unwrap_err();
    assert!(matches!(err, OnnxError::InputSize { .. }), "{err}");
    assert!(err.to_string().contains("640x640"));
}

#[test]
fn wrong_size_tensor_is_an_input_mismatch() {
    let backend = OnnxBackend::load(&fixture("head_8.onnx"), labels(5)).unwrap();
    assert!(matches!(backend.predict(&pattern(16)), Err(ModelError::InputMismatch(_))));
}

#[test]
fn label_count_must_match_outputs() {
    let err = OnnxBackend::load(&fixture("head_8.onnx"), labels(4)).unwrap_err();
    assert!(matches!(err, OnnxError::Labels(_)), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let label_path = dir.path().join("labels.txt");
    write_label_file(&label_path, &labels(3)).unwrap();
    let err = load_external_backend(&fixture("head_1024.onnx"), &label_path, 1024).unwrap_err();
    assert!(matches!(err, OnnxError::Labels(_)), "{err}");
}

#[test]
fn missing_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let label_path = dir.path().join("labels.txt");
    write_label_file(&label_path, &labels(5)).unwrap();
    let err = load_external_backend(&dir.path().join("absent.onnx"), &label_path, 1024).unwrap_err();
    assert!(matches!(err, OnnxError::Io { .. }), "{err}");
    let err = load_external_backend(&fixture("head_1024.onnx"), &dir.path().join("absent.txt"), 1024).unwrap_err();
    assert!(matches!(err, OnnxError::Io { .. }), "{err}");
}

#[test]
fn corrupt_bytes_are_rejected() {
    let bytes = std::fs::read(fixture("small_cnn.onnx")).unwrap();
    for cut in [1, bytes.len() / 3, bytes.len() / 2, bytes.len() - 1] {
        assert!(OnnxBackend::from_bytes("cut", &bytes[..cut], labels(4)).is_err(), "prefix of {cut} bytes loaded");
    }
    assert!(OnnxBackend::from_bytes("junk", b"definitely not a model", labels(4)).is_err());
    assert!(OnnxBackend::from_bytes("empty", &[], labels(4)).is_err());
}
