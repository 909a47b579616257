//! Softmax-linear classifier over hand-crafted image features.
//!
//! Features (30 values):
//! * per-channel mean and variance (gray inputs count as three equal channels)
//! * an 8-bin histogram of luma gradient magnitude, bins split at
//!   1/256, 1/128, ..., 1/4
//! * luma averaged over a 4x4 grid of cells
//!
//! Features are standardized with training-set statistics. The objective is
//! mean cross-entropy plus `weight_decay / 2 * ||W||^2`, minimized by plain
//! mini-batch gradient descent with inverted dropout on the inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    train_with_early_stopping, Checkpoint, ClassProbabilities, ClassifierBackend, ModelError, Result,
    TrainableModel, TrainingConfig, TrainingLog,
};
use crate::imaging::NormalizedTensor;

pub const FEATURE_LEN: usize = 30;

const GRADIENT_EDGES: [f64; 7] = [
    1.0 / 256.0,
    1.0 / 128.0,
    1.0 / 64.0,
    1.0 / 32.0,
    1.0 / 16.0,
    1.0 / 8.0,
    1.0 / 4.0,
];
const GRID: usize = 4;

pub fn extract_features(t: &NormalizedTensor) -> Vec<f64> {
    let (w, h) = (t.width() as usize, t.height() as usize);
    let n = (w * h) as f64;
    let stride = t.channels().count();

    let mut sum = [0.0f64; 3];
    let mut sq = [0.0f64; 3];
    let mut luma = Vec::with_capacity(w * h);
    for px in t.values().chunks_exact(stride) {
        let rgb = match *px {
            [v] => [v as f64; 3],
            [r, g, b] => [r as f64, g as f64, b as f64],
            _ => unreachable!("tensors have one or three channels"),
        };
        for c in 0..3 {
            sum[c] += rgb[c];
            sq[c] += rgb[c] * rgb[c];
        }
        luma.push(0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]);
    }
    let mut features = Vec::with_capacity(FEATURE_LEN);
    for c in 0..3 {
        let mean = sum[c] / n;
        features.push(mean);
        features.push((sq[c] / n - mean * mean).max(0.0));
    }

    let at = |x: usize, y: usize| luma[y * w + x];

    let mut hist = [0.0; 8];
    for y in 0..h {
        for x in 0..w {
            let gx = (at((x + 1).min(w - 1), y) - at(x.saturating_sub(1), y)) / 2.0;
            let gy = (at(x, (y + 1).min(h - 1)) - at(x, y.saturating_sub(1))) / 2.0;
            let magnitude = (gx * gx + gy * gy).sqrt();
            let bin = GRADIENT_EDGES.iter().take_while(|&&e| magnitude >= e).count();
            hist[bin] += 1.0;
        }
    }
    features.extend(hist.iter().map(|c| c / n));

    let mut cells = [(0.0, 0usize); GRID * GRID];
    for y in 0..h {
        for x in 0..w {
            let cell = &mut cells[(y * GRID / h) * GRID + x * GRID / w];
            cell.0 += at(x, y);
            cell.1 += 1;
        }
    }
    features.extend(cells.iter().map(|&(s, k)| if k == 0 { 0.0 } else { s / k as f64 }));
    features
}

/// Feature vector with the index of its label.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSample {
    pub features: Vec<f64>,
    pub label: usize,
}

impl FeatureSample {
    pub fn from_tensor(tensor: &NormalizedTensor, label: usize) -> Self {
        Self {
            features: extract_features(tensor),
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    name: String,
    labels: Vec<String>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// Row-major, one row of `dim` weights per label.
    weights: Vec<f64>,
    bias: Vec<f64>,
    dropout: f64,
    weight_decay: f64,
}

impl BaselineModel {
    /// Zero-initialized model whose standardizer is fit on `train`.
    pub fn new(
        name: impl Into<String>,
        labels: Vec<String>,
        train: &[FeatureSample],
        dropout: f64,
        weight_decay: f64,
    ) -> Result<Self> {
        let k = labels.len();
        if k < 2 {
            return Err(ModelError::DegenerateLabels(format!("{k} label(s); need at least 2")));
        }
        let dim = train.first().map(|s| s.features.len()).ok_or(ModelError::EmptyDataset)?;
        if dim == 0 {
            return Err(ModelError::InputMismatch("empty feature vectors".into()));
        }
        let mut seen = vec![false; k];
        for s in train {
            if s.features.len() != dim {
                return Err(ModelError::InputMismatch(format!(
                    "feature length {} differs from {dim}",
                    s.features.len()
                )));
            }
            *seen.get_mut(s.label).ok_or_else(|| ModelError::UnknownLabel(format!("index {}", s.label)))? = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(ModelError::DegenerateLabels(format!(
                "label {:?} has no training samples",
                labels[missing]
            )));
        }

        let n = train.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|j| train.iter().map(|s| s.features[j]).sum::<f64>() / n).collect();
        let scale = (0..dim)
            .map(|j| {
                let var = train.iter().map(|s| (s.features[j] - mean[j]).powi(2)).sum::<f64>() / n;
                // Constant features carry no signal and are switched off.
                if var.sqrt() < 1e-9 {
                    0.0
                } else {
                    1.0 / var.sqrt()
                }
            })
            .collect();
        Ok(Self {
            name: name.into(),
            labels,
            mean,
            scale,
            weights: vec![0.0; k * dim],
            bias: vec![0.0; k],
            dropout,
            weight_decay,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn standardize(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.dim() {
            return Err(ModelError::InputMismatch(format!(
                "expected {} features, got {}",
                self.dim(),
                features.len()
            )));
        }
        Ok(features
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((f, m), s)| (f - m) * s)
            .collect())
    }

    fn logits(&self, z: &[f64]) -> Vec<f64> {
        let dim = self.dim();
        (0..self.labels.len())
            .map(|k| {
                let row = &self.weights[k * dim..(k + 1) * dim];
                self.bias[k] + row.iter().zip(z).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }

    pub fn predict_features(&self, features: &[f64]) -> Result<ClassProbabilities> {
        let z = self.standardize(features)?;
        ClassProbabilities::from_logits(self.labels.clone(), &self.logits(&z))
    }

    /// Weights (row-major) followed by biases.
    pub fn parameters(&self) -> Vec<f64> {
        self.weights.iter().chain(&self.bias).copied().collect()
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        let nw = self.weights.len();
        if params.len() != nw + self.bias.len() {
            return Err(ModelError::InputMismatch(format!(
                "expected {} parameters, got {}",
                nw + self.bias.len(),
                params.len()
            )));
        }
        self.weights.copy_from_slice(&params[..nw]);
        self.bias.copy_from_slice(&params[nw..]);
        Ok(())
    }

    /// Regularized objective on `batch`, without dropout.
    pub fn objective(&self, batch: &[&FeatureSample]) -> Result<f64> {
        Ok(self.loss_and_gradient(batch, None)?.0 + self.penalty())
    }

    /// Gradient of [`Self::objective`], laid out like [`Self::parameters`].
    pub fn gradient(&self, batch: &[&FeatureSample]) -> Result<Vec<f64>> {
        Ok(self.loss_and_gradient(batch, None)?.1)
    }

    fn penalty(&self) -> f64 {
        0.5 * self.weight_decay * self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Mean cross-entropy and the gradient of the full objective. With a
    /// `dropout` generator, standardized inputs are masked and rescaled.
    fn loss_and_gradient(
        &self,
        batch: &[&FeatureSample],
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Vec<f64>)> {
        let (k, dim) = (self.labels.len(), self.dim());
        let mut grad = vec![0.0; k * dim + k];
        let mut loss = 0.0;
        let keep = 1.0 - self.dropout;
        for sample in batch {
            if sample.label >= k {
                return Err(ModelError::UnknownLabel(format!("index {}", sample.label)));
            }
            let mut z = self.standardize(&sample.features)?;
            if let Some(rng) = dropout.as_deref_mut() {
                for v in &mut z {
                    *v = if rng.random::<f64>() < keep { *v / keep } else { 0.0 };
                }
            }
            let logits = self.logits(&z);
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_norm = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            loss += log_norm - logits[sample.label];
            for c in 0..k {
                let residual = (logits[c] - log_norm).exp() - if c == sample.label { 1.0 } else { 0.0 };
                for (g, x) in grad[c * dim..(c + 1) * dim].iter_mut().zip(&z) {
                    *g += residual * x;
                }
                grad[k * dim + c] += residual;
            }
        }
        let n = batch.len().max(1) as f64;
        for g in &mut grad {
            *g /= n;
        }
        for (g, w) in grad.iter_mut().zip(&self.weights) {
            *g += self.weight_decay * w;
        }
        Ok((loss / n, grad))
    }

    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self> {
        decode_state(&checkpoint.state)
    }
}

impl ClassifierBackend for BaselineModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn predict(&self, input: &NormalizedTensor) -> Result<ClassProbabilities> {
        self.predict_features(&extract_features(input))
    }
}

impl TrainableModel for BaselineModel {
    type Sample = FeatureSample;

    fn train_step(&mut self, batch: &[&FeatureSample], lr: f64, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let use_dropout = self.dropout > 0.0;
        let (loss, grad) = self.loss_and_gradient(batch, use_dropout.then_some(&mut rng))?;
        for (p, g) in self.weights.iter_mut().chain(self.bias.iter_mut()).zip(&grad) {
            *p -= lr * g;
        }
        Ok(loss)
    }

    fn evaluate(&self, samples: &[FeatureSample]) -> Result<f64> {
        let refs: Vec<&FeatureSample> = samples.iter().collect();
        Ok(self.loss_and_gradient(&refs, None)?.0)
    }

    fn snapshot(&self) -> Vec<u8> {
        encode_state(self)
    }

    fn restore(&mut self, state: &[u8]) -> Result<()> {
        *self = decode_state(state)?;
        Ok(())
    }
}

/// Builds a baseline for `labels` and trains it with early stopping.
/// Returns the best-validation model, its checkpoint and the log.
pub fn baseline_fit(
    name: &str,
    labels: Vec<String>,
    train: &[FeatureSample],
    val: &[FeatureSample],
    config: &TrainingConfig,
) -> Result<(BaselineModel, Checkpoint, TrainingLog)> {
    config.validate()?;
    let mut model = BaselineModel::new(name, labels, train, config.dropout, config.weight_decay)?;
    let (checkpoint, log) = train_with_early_stopping(&mut model, train, val, config)?;
    Ok((model, checkpoint, log))
}

fn encode_state(m: &BaselineModel) -> Vec<u8> {
    fn put_str(out: &mut Vec<u8>, s: &str) {
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        out.extend_from_slice(s.as_bytes());
    }
    fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = Vec::new();
    put_str(&mut out, &m.name);
    out.extend_from_slice(&(m.labels.len() as u32).to_le_bytes());
    for l in &m.labels {
        put_str(&mut out, l);
    }
    out.extend_from_slice(&(m.dim() as u32).to_le_bytes());
    put_f64s(&mut out, &[m.dropout, m.weight_decay]);
    put_f64s(&mut out, &m.mean);
    put_f64s(&mut out, &m.scale);
    put_f64s(&mut out, &m.weights);
    put_f64s(&mut out, &m.bias);
    out
}

fn decode_state(bytes: &[u8]) -> Result<BaselineModel> {
    struct Cursor<'a>(&'a [u8]);
    impl Cursor<'_> {
        fn take(&mut self, n: usize) -> Result<&[u8]> {
            if self.0.len() < n {
                return Err(ModelError::Checkpoint("truncated baseline state".into()));
            }
            let (head, rest) = self.0.split_at(n);
            self.0 = rest;
            Ok(head)
        }
        fn u32(&mut self) -> Result<usize> {
            Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
        }
        fn string(&mut self) -> Result<String> {
            let n = self.u32()?;
            String::from_utf8(self.take(n)?.to_vec()).map_err(|_| ModelError::Checkpoint("bad utf-8".into()))
        }
        fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
            let raw = self.take(n.checked_mul(8).ok_or_else(|| ModelError::Checkpoint("size overflow".into()))?)?;
            Ok(raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        }
    }

    let mut c = Cursor(bytes);
    let name = c.string()?;
    let k = c.u32()?;
    let labels = (0..k).map(|_| c.string()).collect::<Result<Vec<_>>>()?;
    let dim = c.u32()?;
    let hyper = c.f64s(2)?;
    let mean = c.f64s(dim)?;
    let scale = c.f64s(dim)?;
    let weights = c.f64s(k * dim)?;
    let bias = c.f64s(k)?;
    if !c.0.is_empty() {
        return Err(ModelError::Checkpoint("trailing bytes in baseline state".into()));
    }
    Ok(BaselineModel {
        name,
        labels,
        mean,
        scale,
        weights,
        bias,
        dropout: hyper[0],
        weight_decay: hyper[1],
    })
}
