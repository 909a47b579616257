//! Two-stage inference: preprocess once, classify the instrument, then run
//! that instrument's defect model, turning each stage's top prediction into a
//! [`Disposition`] by confidence threshold.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::dataset::{DefectLabel, InstrumentLabel};
use crate::imaging::{normalize, resize_bilinear, unsharp_mask, ImagingError, NormalizedTensor, RasterImage};
use crate::model::{ClassProbabilities, ClassifierBackend, ModelError};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("backend {backend:?} emitted unknown label {label:?}")]
    UnknownLabel { backend: String, label: String },
    #[error("no defect model registered for {0}")]
    MissingDefectModel(InstrumentLabel),
    #[error("backend {backend:?} expects {expected:?} input, got {actual:?}")]
    InputSize {
        backend: String,
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// A stage's verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Disposition<L> {
    Accepted { label: L, confidence: f64 },
    FlaggedForReview { label: L, confidence: f64 },
    NoInstrumentDetected,
    NoDefectDetected,
}

impl<L: Copy> Disposition<L> {
    pub fn is_flagged(&self) -> bool {
        matches!(self, Disposition::FlaggedForReview { .. })
    }

    pub fn accepted_label(&self) -> Option<L> {
        match *self {
            Disposition::Accepted { label, .. } => Some(label),
            _ => None,
        }
    }
}

/// Instrument-stage rule: a confident `Miscellaneous` means no instrument,
/// any other confident label is accepted, anything below threshold is
/// flagged.
pub fn instrument_disposition(label: InstrumentLabel, confidence: f64, threshold: f64) -> Disposition<InstrumentLabel> {
    if confidence < threshold {
        Disposition::FlaggedForReview { label, confidence }
    } else if label.is_miscellaneous() {
        Disposition::NoInstrumentDetected
    } else {
        Disposition::Accepted { label, confidence }
    }
}

/// Defect-stage rule: confident labels (including `NoDefect`) are accepted,
/// an unsure `NoDefect` is flagged, an unsure defect falls back to
/// [`Disposition::NoDefectDetected`].
pub fn defect_disposition(label: DefectLabel, confidence: f64, threshold: f64) -> Disposition<DefectLabel> {
    if confidence >= threshold {
        Disposition::Accepted { label, confidence }
    } else if label.is_defect() {
        Disposition::NoDefectDetected
    } else {
        Disposition::FlaggedForReview { label, confidence }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub unsharp_sigma: f64,
    pub unsharp_amount: f64,
    pub target_size: u32,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            unsharp_sigma: 1.0,
            unsharp_amount: 1.0,
            target_size: 1024,
        }
    }
}

/// Unsharp mask, bilinear resize to a square, then scale to [0, 1].
pub fn preprocess(img: &RasterImage, config: &PreprocessConfig) -> Result<NormalizedTensor, ImagingError> {
    let sharp = unsharp_mask(img, config.unsharp_sigma, config.unsharp_amount)?;
    let sized = resize_bilinear(&sharp, config.target_size, config.target_size)?;
    Ok(normalize(&sized))
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub instrument_backend: Arc<dyn ClassifierBackend>,
    pub defect_registry: BTreeMap<InstrumentLabel, Arc<dyn ClassifierBackend>>,
    pub confidence_threshold: f64,
    pub preprocess: PreprocessConfig,
}

impl PipelineConfig {
    /// Checks the threshold, that every backend label parses, and that each
    /// non-`Miscellaneous` instrument label has a defect model.
    pub fn new(
        instrument_backend: Arc<dyn ClassifierBackend>,
        defect_registry: BTreeMap<InstrumentLabel, Arc<dyn ClassifierBackend>>,
        confidence_threshold: f64,
        preprocess: PreprocessConfig,
    ) -> Result<Self> {
        if !(confidence_threshold > 0.0 && confidence_threshold < 1.0) {
            return Err(PipelineError::InvalidConfig(format!(
                "threshold {confidence_threshold} outside (0, 1)"
            )));
        }
        for name in instrument_backend.labels() {
            let label: InstrumentLabel = parse_label(instrument_backend.as_ref(), name)?;
            if !label.is_miscellaneous() && !defect_registry.contains_key(&label) {
                return Err(PipelineError::MissingDefectModel(label));
            }
        }
        for backend in defect_registry.values() {
            for name in backend.labels() {
                parse_label::<DefectLabel>(backend.as_ref(), name)?;
            }
        }
        Ok(Self {
            instrument_backend,
            defect_registry,
            confidence_threshold,
            preprocess,
        })
    }
}

fn parse_label<L: FromStr>(backend: &dyn ClassifierBackend, name: &str) -> Result<L> {
    name.parse().map_err(|_| PipelineError::UnknownLabel {
        backend: backend.name().to_string(),
        label: name.to_string(),
    })
}

fn run_backend(backend: &dyn ClassifierBackend, tensor: &NormalizedTensor) -> Result<ClassProbabilities> {
    if let Some(expected) = backend.input_size() {
        let actual = (tensor.width(), tensor.height());
        if expected != actual {
            return Err(PipelineError::InputSize {
                backend: backend.name().to_string(),
                expected,
                actual,
            });
        }
    }
    Ok(backend.predict(tensor)?)
}

pub fn classify_instrument(
    tensor: &NormalizedTensor,
    config: &PipelineConfig,
) -> Result<(Disposition<InstrumentLabel>, ClassProbabilities)> {
    let backend = config.instrument_backend.as_ref();
    let probs = run_backend(backend, tensor)?;
    let (name, confidence) = probs.top();
    let label = parse_label(backend, name)?;
    Ok((instrument_disposition(label, confidence, config.confidence_threshold), probs))
}

pub fn classify_defect(
    tensor: &NormalizedTensor,
    instrument: InstrumentLabel,
    config: &PipelineConfig,
) -> Result<(Disposition<DefectLabel>, ClassProbabilities)> {
    let backend = config
        .defect_registry
        .get(&instrument)
        .ok_or(PipelineError::MissingDefectModel(instrument))?
        .as_ref();
    let probs = run_backend(backend, tensor)?;
    let (name, confidence) = probs.top();
    let label = parse_label(backend, name)?;
    Ok((defect_disposition(label, confidence, config.confidence_threshold), probs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: String,
    pub confidence: f64,
}

fn top_scores(probs: &ClassProbabilities) -> Vec<LabelScore> {
    probs
        .top_k(3)
        .into_iter()
        .map(|(label, confidence)| LabelScore { label, confidence })
        .collect()
}

/// Wall-clock milliseconds per stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageLatency {
    pub preprocess_ms: f64,
    pub instrument_ms: f64,
    pub defect_ms: Option<f64>,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub scan_id: Uuid,
    pub instrument: Disposition<InstrumentLabel>,
    /// Present only when the instrument was accepted.
    pub defect: Option<Disposition<DefectLabel>>,
    pub instrument_top: Vec<LabelScore>,
    pub defect_top: Vec<LabelScore>,
    pub latency: StageLatency,
    pub timestamp: DateTime<Utc>,
}

impl ScanResult {
    pub fn needs_review(&self) -> bool {
        self.instrument.is_flagged() || self.defect.is_some_and(|d| d.is_flagged())
    }
}

/// Audit record for a scan that could not complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Error)]
#[error("scan {scan_id} failed during {stage}: {message}")]
pub struct ScanFailure {
    pub scan_id: Uuid,
    pub stage: String,
    pub message: String,
    pub timestamp: DateTime<Utc>,
}

pub fn run_scan(img: &RasterImage, config: &PipelineConfig) -> Result<ScanResult, ScanFailure> {
    run_scan_with_id(Uuid::new_v4(), img, config)
}

pub fn run_scan_with_id(scan_id: Uuid, img: &RasterImage, config: &PipelineConfig) -> Result<ScanResult, ScanFailure> {
    let fail = |stage: &str, err: &dyn std::error::Error| ScanFailure {
        scan_id,
        stage: stage.to_string(),
        message: err.to_string(),
        timestamp: Utc::now(),
    };
    let ms = |t: Instant| t.elapsed().as_secs_f64() * 1000.0;

    let start = Instant::now();
    let tensor = preprocess(img, &config.preprocess).map_err(|e| fail("preprocess", &e))?;
    let preprocess_ms = ms(start);

    let t = Instant::now();
    let (instrument, instrument_probs) = classify_instrument(&tensor, config).map_err(|e| fail("instrument", &e))?;
    let instrument_ms = ms(t);

    let (defect, defect_top, defect_ms) = match instrument.accepted_label() {
        Some(label) => {
            let t = Instant::now();
            let (d, probs) = classify_defect(&tensor, label, config).map_err(|e| fail("defect", &e))?;
            (Some(d), top_scores(&probs), Some(ms(t)))
        }
        None => (None, Vec::new(), None),
    };

    Ok(ScanResult {
        scan_id,
        instrument,
        defect,
        instrument_top: top_scores(&instrument_probs),
        defect_top,
        latency: StageLatency {
            preprocess_ms,
            instrument_ms,
            defect_ms,
            total_ms: ms(start),
        },
        timestamp: Utc::now(),
    })
}
