//! Helpers shared by the service tests: stub backends whose confidence is
//! set by the gray level of the scanned image, PNG fixtures, and a minimal
//! blocking HTTP/1.1 client.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::sync::Arc;

use instqc_core::dataset::InstrumentLabel;
use instqc_core::imaging::{encode_png, Channels, NormalizedTensor, RasterImage};
use instqc_core::model::{ClassProbabilities, ClassifierBackend, ModelError};
use instqc_core::pipeline::{PipelineConfig, PreprocessConfig};
use instqc_service::server::{router, AppState};
use instqc_service::store::Store;

/// Gray level the stubs refuse to classify, to exercise scan failures.
pub const FAILING_GRAY: u8 = 128;
pub const IMAGE_SIZE: u32 = 16;

/// Puts confidence `0.4 + 0.6 * m` on its first label, where `m` is the
/// mean input value, and spreads the rest evenly. A black image therefore
/// scores 0.4 (below the default threshold) and a white one 1.0.
pub struct GrayStub {
    name: String,
    labels: Vec<String>,
}

impl GrayStub {
    pub fn backend(name: &str, labels: &[&str]) -> Arc<dyn ClassifierBackend> {
        Arc::new(Self {
            name: name.into(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
        })
    }
}

impl ClassifierBackend for GrayStub {
    fn name(&self) -> &str {
        &self.name
    }
    fn labels(&self) -> &[String] {
        &self.labels
    }
    fn predict(&self, t: &NormalizedTensor) -> instqc_core::model::Result<ClassProbabilities> {
        let m = t.values().iter().map(|&v| f64::from(v)).sum::<f64>() / t.values().len() as f64;
        if (m * 255.0 - f64::from(FAILING_GRAY)).abs() < 0.5 {
            return Err(ModelError::Backend("stub refuses mid-gray input".into()));
        }
        let c = 0.4 + 0.6 * m;
        let rest = (1.0 - c) / (self.labels.len() - 1) as f64;
        let p = (0..self.labels.len()).map(|i| if i == 0 { c } else { rest }).collect();
        ClassProbabilities::new(self.labels.clone(), p)
    }
}

/// Instrument stage predicts Scalpel, Scissors or Miscellaneous (top:
/// Scalpel); each instrument's defect stage predicts Scratches, Pores or
/// NoDefect (top: Scratches).
pub fn stub_pipeline() -> PipelineConfig {
    let defects = &["Scratches", "Pores", "NoDefect"];
    let registry: BTreeMap<InstrumentLabel, Arc<dyn ClassifierBackend>> = [
        (InstrumentLabel::Scalpel, GrayStub::backend("scalpel-defects", defects)),
        (InstrumentLabel::Scissors, GrayStub::backend("scissors-defects", defects)),
    ]
    .into();
    PipelineConfig::new(
        GrayStub::backend("instrument", &["Scalpel", "Scissors", "Miscellaneous"]),
        registry,
        0.5,
        PreprocessConfig {
            target_size: IMAGE_SIZE,
            ..PreprocessConfig::default()
        },
    )
    .unwrap()
}

pub fn gray_png(level: u8) -> Vec<u8> {
    encode_png(&RasterImage::filled(IMAGE_SIZE, IMAGE_SIZE, Channels::Rgb, level).unwrap()).unwrap()
}

/// A server on an ephemeral port backed by a store in `dir`. Dropping the
/// runtime stops it without any shutdown handshake.
pub struct TestServer {
    pub addr: SocketAddr,
    pub store: Arc<Store>,
    runtime: Option<tokio::runtime::Runtime>,
}

impl TestServer {
    pub fn start(dir: &Path, ui_dir: Option<&Path>) -> Self {
        let store = Arc::new(Store::open(dir, &dir.join("review_manifest.jsonl")).unwrap());
        let state = Arc::new(AppState::new(store.clone(), stub_pipeline(), 2, ui_dir.map(Path::to_path_buf)));
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let addr = listener.local_addr().unwrap();
        runtime.spawn(async move { axum::serve(listener, router(state, 1 << 20)).await });
        Self {
            addr,
            store,
            runtime: Some(runtime),
        }
    }

    pub fn kill(mut self) {
        if let Some(rt) = self.runtime.take() {
            rt.shutdown_background();
        }
    }

    pub fn get(&self, path: &str) -> Response {
        request(self.addr, "GET", path, None, &[])
    }

    pub fn post_json(&self, path: &str, body: &serde_json::Value) -> Response {
        request(self.addr, "POST", path, Some("application/json"), body.to_string().as_bytes())
    }

    pub fn upload(&self, png: &[u8]) -> Response {
        let (content_type, body) = multipart_body("image", "scan.png", png);
        request(self.addr, "POST", "/api/scans", Some(&content_type), &body)
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(rt) = self.runtime.take() {
            rt.shutdown_background();
        }
    }
}

pub fn multipart_body(field: &str, filename: &str, data: &[u8]) -> (String, Vec<u8>) {
    let boundary = "----instqc-test-boundary";
    let mut body = format!(
        "--{boundary}\r\nContent-Disposition: form-data; name=\"{field}\"; filename=\"{filename}\"\r\n\
         Content-Type: image/png\r\n\r\n"
    )
    .into_bytes();
    body.extend_from_slice(data);
    body.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
    (format!("multipart/form-data; boundary={boundary}"), body)
}

#[derive(Debug)]
pub struct Response {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl Response {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body)
            .unwrap_or_else(|e| panic!("status {}: body is not JSON ({e}): {}", self.status, self.text()))
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

/// One request on a fresh connection, read until the server closes it.
pub fn request(addr: SocketAddr, method: &str, path: &str, content_type: Option<&str>, body: &[u8]) -> Response {
    let mut stream = TcpStream::connect(addr).unwrap();
    let mut head = format!(
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\nContent-Length: {}\r\n",
        body.len()
    );
    if let Some(ct) = content_type {
        head += &format!("Content-Type: {ct}\r\n");
    }
    head += "\r\n";
    stream.write_all(head.as_bytes()).unwrap();
    stream.write_all(body).unwrap();
    let mut raw = Vec::new();
    stream.read_to_end(&mut raw).unwrap();
    parse_response(&raw)
}

fn parse_response(raw: &[u8]) -> Response {
    let split = raw.windows(4).position(|w| w == b"\r\n\r\n").expect("header terminator");
    let head = std::str::from_utf8(&raw[..split]).unwrap();
    let mut lines = head.split("\r\n");
    let status = lines.next().unwrap().split(' ').nth(1).unwrap().parse().unwrap();
    let headers: Vec<(String, String)> = lines
        .filter_map(|l| l.split_once(':'))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect();
    let mut body = raw[split + 4..].to_vec();
    let chunked = headers
        .iter()
        .any(|(k, v)| k.eq_ignore_ascii_case("transfer-encoding") && v.eq_ignore_ascii_case("chunked"));
    if chunked {
        body = dechunk(&body);
    }
    Response { status, headers, body }
}

fn dechunk(mut data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    loop {
        let eol = data.windows(2).position(|w| w == b"\r\n").unwrap();
        let size_text = std::str::from_utf8(&data[..eol]).unwrap();
        let size = usize::from_str_radix(size_text.split(';').next().unwrap().trim(), 16).unwrap();
        data = &data[eol + 2..];
        if size == 0 {
            return out;
        }
        out.extend_from_slice(&data[..size]);
        data = &data[size + 2..];
    }
}
