//! Model directories.
//!
//! ```text
//! <model_dir>/instrument.ckpt                 baseline checkpoint, or
//! <model_dir>/instrument.onnx + .labels       external model and its label file
//! <model_dir>/defect/<instrument-slug>.ckpt   one defect model per instrument,
//! <model_dir>/defect/<instrument-slug>.onnx   with the same alternatives, plus
//! <model_dir>/defect/<instrument-slug>.labels alone, for a single-label stage
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use instqc_core::dataset::InstrumentLabel;
use instqc_core::imaging::NormalizedTensor;
use instqc_core::model::{
    read_label_file, BaselineModel, Checkpoint, ClassProbabilities, ClassifierBackend, Result as ModelResult,
};
use instqc_core::pipeline::PipelineConfig;
use instqc_onnx::load_external_backend;

use crate::config::Config;

pub const INSTRUMENT_STEM: &str = "instrument";
pub const DEFECT_DIR: &str = "defect";

/// A stage with only one possible answer, e.g. an instrument never seen
/// with any defect.
#[derive(Debug, Clone)]
pub struct ConstantBackend {
    name: String,
    labels: Vec<String>,
}

impl ConstantBackend {
    pub fn new(name: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            labels: vec![label.into()],
        }
    }
}

impl ClassifierBackend for ConstantBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn predict(&self, _: &NormalizedTensor) -> ModelResult<ClassProbabilities> {
        ClassProbabilities::new(self.labels.clone(), vec![1.0])
    }
}

pub fn defect_stem(instrument: InstrumentLabel) -> PathBuf {
    Path::new(DEFECT_DIR).join(instrument.slug())
}

/// Loads `<dir>/<stem>` from whichever supported file exists, preferring
/// ONNX over a baseline checkpoint.
pub fn load_backend(dir: &Path, stem: &Path, target_size: u32) -> anyhow::Result<Arc<dyn ClassifierBackend>> {
    let base = dir.join(stem);
    let with = |ext: &str| base.with_extension(ext);
    let (onnx, ckpt, labels) = (with("onnx"), with("ckpt"), with("labels"));
    if onnx.exists() {
        let backend = load_external_backend(&onnx, &labels, target_size)
            .with_context(|| format!("loading {}", onnx.display()))?;
        return Ok(Arc::new(backend));
    }
    if ckpt.exists() {
        let checkpoint = Checkpoint::load(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
        let model = BaselineModel::from_checkpoint(&checkpoint).with_context(|| format!("decoding {}", ckpt.display()))?;
        return Ok(Arc::new(model));
    }
    if labels.exists() {
        let mut names = read_label_file(&labels)?;
        if names.len() != 1 {
            bail!("{} lists {} labels but no model file exists", labels.display(), names.len());
        }
        let name = stem.to_string_lossy().into_owned();
        return Ok(Arc::new(ConstantBackend::new(name, names.remove(0))));
    }
    bail!("no model at {} (.onnx, .ckpt or single-label .labels)", base.display())
}

/// Loads the instrument model and one defect model per instrument it can
/// emit, then validates the assembled pipeline.
pub fn load_pipeline(model_dir: &Path, config: &Config) -> anyhow::Result<PipelineConfig> {
    let size = config.preprocess.target_size;
    let instrument = load_backend(model_dir, Path::new(INSTRUMENT_STEM), size)?;
    let mut registry = BTreeMap::new();
    for name in instrument.labels() {
        let label: InstrumentLabel = name.parse()?;
        if !label.is_miscellaneous() {
            registry.insert(label, load_backend(model_dir, &defect_stem(label), size)?);
        }
    }
    Ok(PipelineConfig::new(
        instrument,
        registry,
        config.pipeline.confidence_threshold,
        config.preprocess,
    )?)
}
