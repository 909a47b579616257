//! Classifier backends, the early-stopping training loop and its learning
//! rate schedule, binary checkpoints, and a feature-based baseline model.

mod baseline;
mod checkpoint;
mod train;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::NormalizedTensor;

pub use baseline::{baseline_fit, extract_features, BaselineModel, FeatureSample, FEATURE_LEN};
pub use checkpoint::Checkpoint;
pub use train::{train_with_early_stopping, EpochRecord, StopReason, TrainingLog};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid probabilities: {0}")]
    InvalidProbabilities(String),
    #[error("label {0:?} is not in the label set")]
    UnknownLabel(String),
    #[error("epoch {epoch} outside 1..={epochs}")]
    EpochOutOfRange { epoch: usize, epochs: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training and validation sets must be non-empty")]
    EmptyDataset,
    #[error("non-finite {phase} loss {value} at epoch {epoch}")]
    NonFiniteLoss { epoch: usize, phase: &'static str, value: f64 },
    #[error("degenerate label set: {0}")]
    DegenerateLabels(String),
    #[error("input mismatch: {0}")]
    InputMismatch(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// A probability distribution over an ordered label set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProbabilities {
    labels: Vec<String>,
    probabilities: Vec<f64>,
}

impl ClassProbabilities {
    /// Tolerance on the sum of probabilities.
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(labels: Vec<String>, probabilities: Vec<f64>) -> Result<Self> {
        if labels.is_empty() || labels.len() != probabilities.len() {
            return Err(ModelError::InvalidProbabilities(format!(
                "{} labels for {} probabilities",
                labels.len(),
                probabilities.len()
            )));
        }
        if let Some(p) = probabilities.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(ModelError::InvalidProbabilities(format!("entry {p} is not a probability")));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(ModelError::InvalidProbabilities(format!("sum is {sum}")));
        }
        Ok(Self { labels, probabilities })
    }

    /// Numerically stable softmax of `logits`.
    pub fn from_logits(labels: Vec<String>, logits: &[f64]) -> Result<Self> {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Self::new(labels, exps.into_iter().map(|e| e / total).collect())
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|i| self.probabilities[i])
    }

    /// Most probable label. Ties go to the earliest label.
    pub fn top(&self) -> (&str, f64) {
        let mut best = 0;
        for (i, &p) in self.probabilities.iter().enumerate() {
            if p > self.probabilities[best] {
                best = i;
            }
        }
        (&self.labels[best], self.probabilities[best])
    }

    /// The `k` most probable entries, descending, ties by label order.
    pub fn top_k(&self, k: usize) -> Vec<(String, f64)> {
        let mut order: Vec<usize> = (0..self.labels.len()).collect();
        order.sort_by(|&a, &b| self.probabilities[b].total_cmp(&self.probabilities[a]).then(a.cmp(&b)));
        order
            .into_iter()
            .take(k)
            .map(|i| (self.labels[i].clone(), self.probabilities[i]))
            .collect()
    }
}

/// Anything that maps a preprocessed image to class probabilities.
pub trait ClassifierBackend: Send + Sync {
    fn name(&self) -> &str;

    fn labels(&self) -> &[String];

    /// Required `(width, height)` of the input tensor, when fixed.
    fn input_size(&self) -> Option<(u32, u32)> {
        None
    }

    fn predict(&self, input: &NormalizedTensor) -> Result<ClassProbabilities>;
}

impl fmt::Debug for dyn ClassifierBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClassifierBackend")
            .field("name", &self.name())
            .field("labels", &self.labels())
            .finish()
    }
}

/// A backend that the training loop can optimize.
pub trait TrainableModel: ClassifierBackend {
    type Sample;

    /// One optimization step on `batch`; returns the batch loss measured
    /// before the update. `seed` drives any stochastic regularization.
    fn train_step(&mut self, batch: &[&Self::Sample], lr: f64, seed: u64) -> Result<f64>;

    /// Mean loss over `samples`, without regularization or dropout.
    fn evaluate(&self, samples: &[Self::Sample]) -> Result<f64>;

    /// Serialized model state.
    fn snapshot(&self) -> Vec<u8>;

    fn restore(&mut self, state: &[u8]) -> Result<()>;
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub image_size: u32,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub dropout: f64,
    pub weight_decay: f64,
    /// An epoch improves only if its validation loss is below `best - min_delta`.
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            image_size: 1024,
            batch_size: 16,
            initial_lr: 0.001,
            epochs: 30,
            patience: 5,
            lr_decay_factor: 0.1,
            lr_decay_every: 10,
            dropout: 0.3,
            weight_decay: 0.0005,
            min_delta: 0.0,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    /// Learning rate the baseline uses in place of 0.001. The baseline is
    /// optimized by plain gradient descent, which barely moves in 30 epochs
    /// at the adaptive-optimizer rate.
    pub const BASELINE_LR: f64 = 0.5;

    /// Defaults with [`Self::BASELINE_LR`].
    pub fn baseline() -> Self {
        Self {
            initial_lr: Self::BASELINE_LR,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(ModelError::InvalidConfig(msg.to_string()));
        if self.image_size == 0 || self.batch_size == 0 || self.epochs == 0 || self.patience == 0 {
            return fail("image_size, batch_size, epochs and patience must be positive");
        }
        if self.patience > self.epochs {
            return fail("patience must not exceed epochs");
        }
        if !(self.initial_lr.is_finite() && self.initial_lr > 0.0) {
            return fail("initial_lr must be positive");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) || self.lr_decay_every == 0 {
            return fail("lr_decay_factor must be in (0, 1] and lr_decay_every positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must be in [0, 1)");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return fail("weight_decay must be non-negative");
        }
        if !(self.min_delta.is_finite() && self.min_delta >= 0.0) {
            return fail("min_delta must be non-negative");
        }
        Ok(())
    }
}

/// Step-decayed learning rate for a 1-based `epoch`: the initial rate times
/// `lr_decay_factor` once per completed `lr_decay_every`-epoch window.
pub fn lr_at_epoch(config: &TrainingConfig, epoch: usize) -> Result<f64> {
    if epoch == 0 || epoch > config.epochs {
        return Err(ModelError::EpochOutOfRange {
            epoch,
            epochs: config.epochs,
        });
    }
    // Repeated multiplication keeps 0.001 * 0.1 * 0.1 exactly 0.00001,
    // which powi does not.
    let mut lr = config.initial_lr;
    for _ in 0..(epoch - 1) / config.lr_decay_every.max(1) {
        lr *= config.lr_decay_factor;
    }
    Ok(lr)
}

/// Smallest probability used inside the logarithm.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// `-ln p(true_label)`, with `p` floored at [`PROBABILITY_FLOOR`].
pub fn cross_entropy(probs: &ClassProbabilities, true_label: &str) -> Result<f64> {
    let p = probs
        .get(true_label)
        .ok_or_else(|| ModelError::UnknownLabel(true_label.to_string()))?;
    Ok(-p.max(PROBABILITY_FLOOR).ln())
}

/// Reads a newline-separated label file. Blank lines are ignored.
pub fn read_label_file(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    let labels: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if labels.is_empty() {
        return Err(ModelError::DegenerateLabels(format!("{} lists no labels", path.display())));
    }
    Ok(labels)
}

pub fn write_label_file(path: &Path, labels: &[String]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = labels.join("\n");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
