//! Reads ONNX image classifiers and runs them on the CPU as
//! [`ClassifierBackend`]s.
//!
//! Only what small convolutional classifiers need is implemented: float
//! tensors, the default operator domain and the operators in
//! [`supported_operators`]. Anything else is rejected when the model is
//! loaded rather than when it first runs.

mod graph;
mod ops;
mod proto;
mod tensor;
mod wire;

use std::path::Path;

use instqc_core::imaging::NormalizedTensor;
use instqc_core::model::{read_label_file, ClassProbabilities, ClassifierBackend, ModelError};
use thiserror::Error;

use graph::Program;
use tensor::Tensor;

#[derive(Debug, Error)]
pub enum OnnxError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed model: {0}")]
    Decode(String),
    #[error("unsupported model feature: {0}")]
    Unsupported(String),
    #[error("model declares a {actual} input but {expected} is required")]
    InputSize { expected: String, actual: String },
    #[error("label mismatch: {0}")]
    Labels(String),
    #[error("inference failed: {0}")]
    Runtime(String),
}

pub type Result<T, E = OnnxError> = std::result::Result<T, E>;

pub fn supported_operators() -> &'static [&'static str] {
    ops::SUPPORTED
}

/// Output sums further than this from 1 are treated as logits.
const DISTRIBUTION_TOLERANCE: f64 = 1e-4;

/// An ONNX classifier taking one `[1, C, H, W]` float input in `[0, 1]` and
/// producing one score per label.
///
/// Outputs that already form a probability distribution are used as is
/// (renormalized in `f64`); anything else is passed through softmax.
#[derive(Debug)]
pub struct OnnxBackend {
    name: String,
    labels: Vec<String>,
    program: Program,
    channels: Option<usize>,
    size: Option<(u32, u32)>,
}

impl OnnxBackend {
    pub fn from_bytes(name: impl Into<String>, bytes: &[u8], labels: Vec<String>) -> Result<Self> {
        let program = Program::new(proto::decode_model(bytes)?)?;
        let (channels, size) = match program.input_dims() {
            None => (None, None),
            Some(d) if d.len() == 4 => {
                if d[0].is_some_and(|n| n != 1) {
                    return Err(OnnxError::Unsupported(format!("batch size {:?}", d[0])));
                }
                if d[1].is_some_and(|c| c != 1 && c != 3) {
                    return Err(OnnxError::Unsupported(format!("{:?} input channels", d[1])));
                }
                let size = match (d[3], d[2]) {
                    (Some(w), Some(h)) => Some((w as u32, h as u32)),
                    _ => None,
                };
                (d[1], size)
            }
            Some(d) => return Err(OnnxError::Unsupported(format!("input of rank {}, expected NCHW", d.len()))),
        };
        if labels.is_empty() {
            return Err(OnnxError::Labels("no labels".into()));
        }
        if let Some(classes) = program.output_dims().and_then(|d| d.last().copied().flatten()) {
            if classes != labels.len() {
                return Err(OnnxError::Labels(format!(
                    "model has {classes} outputs but {} labels were given",
                    labels.len()
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            labels,
            program,
            channels,
            size,
        })
    }

    pub fn load(model_path: &Path, labels: Vec<String>) -> Result<Self> {
        let bytes = std::fs::read(model_path).map_err(|source| OnnxError::Io {
            path: model_path.display().to_string(),
            source,
        })?;
        let name = model_path.file_stem().map_or("onnx".into(), |s| s.to_string_lossy().into_owned());
        Self::from_bytes(name, &bytes, labels)
    }

    /// Runs the graph on an NCHW copy of `input`.
    pub fn scores(&self, input: &NormalizedTensor) -> Result<Vec<f32>> {
        if let Some((w, h)) = self.size {
            if (input.width(), input.height()) != (w, h) {
                return Err(OnnxError::InputSize {
                    expected: format!("{w}x{h}"),
                    actual: format!("{}x{}", input.width(), input.height()),
                });
            }
        }
        let src = input.channels().count();
        let channels = self.channels.unwrap_or(src);
        // Gray images are replicated into every channel; colour cannot be
        // fed to a single-channel model.
        if src != channels && src != 1 {
            return Err(OnnxError::Runtime(format!("{src}-channel input for a {channels}-channel model")));
        }
        let (w, h) = (input.width() as usize, input.height() as usize);
        let values = input.values();
        let mut nchw = Vec::with_capacity(channels * w * h);
        for c in 0..channels {
            let c = if src == 1 { 0 } else { c };
            nchw.extend((0..w * h).map(|p| values[p * src + c]));
        }
        let tensor = Tensor::from_f32(vec![1, channels, h, w], nchw).map_err(OnnxError::Runtime)?;
        let out = self.program.run(tensor)?;
        let scores = out.f32s().map_err(OnnxError::Runtime)?;
        if scores.len() != self.labels.len() {
            return Err(OnnxError::Labels(format!(
                "model produced {} scores for {} labels",
                scores.len(),
                self.labels.len()
            )));
        }
        Ok(scores.to_vec())
    }
}

fn to_model_error(e: OnnxError) -> ModelError {
    match e {
        OnnxError::InputSize { .. } => ModelError::InputMismatch(e.to_string()),
        other => ModelError::Backend(other.to_string()),
    }
}

impl ClassifierBackend for OnnxBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn input_size(&self) -> Option<(u32, u32)> {
        self.size
    }

    fn predict(&self, input: &NormalizedTensor) -> instqc_core::model::Result<ClassProbabilities> {
        let scores: Vec<f64> = self.scores(input).map_err(to_model_error)?.into_iter().map(f64::from).collect();
        let sum: f64 = scores.iter().sum();
        let is_distribution =
            scores.iter().all(|p| (0.0..=1.0).contains(p)) && (sum - 1.0).abs() <= DISTRIBUTION_TOLERANCE;
        if is_distribution {
            ClassProbabilities::new(self.labels.clone(), scores.iter().map(|p| p / sum).collect())
        } else {
            ClassProbabilities::from_logits(self.labels.clone(), &scores)
        }
    }
}

/// Loads an externally trained model plus its newline-separated label file
/// and checks it against the size the preprocessing produces.
///
/// A model with symbolic spatial dims accepts any size; one that declares
/// a different fixed size is refused.
pub fn load_external_backend(model_path: &Path, labels_path: &Path, expected_size: u32) -> Result<OnnxBackend> {
    let labels = read_label_file(labels_path).map_err(|e| match e {
        ModelError::Io(source) => OnnxError::Io {
            path: labels_path.display().to_string(),
            source,
        },
        other => OnnxError::Labels(other.to_string()),
    })?;
    let backend = OnnxBackend::load(model_path, labels)?;
    if let Some((w, h)) = backend.size {
        if (w, h) != (expected_size, expected_size) {
            return Err(OnnxError::InputSize {
                expected: format!("{expected_size}x{expected_size}"),
                actual: format!("{w}x{h}"),
            });
        }
    }
    Ok(backend)
}

