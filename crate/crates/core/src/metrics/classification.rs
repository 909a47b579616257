use serde::{Deserialize, Serialize};

use super::{ratio, MetricsError, Result};
use crate::model::ClassProbabilities;

/// Averaging used for the multi-class ROC-AUC.
pub const ROC_AUC_AVERAGING: &str = "macro_one_vs_rest";

/// Counts of (true, predicted) label pairs over an ordered label set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    /// `counts[t][p]`: samples of true label `t` predicted as `p`.
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        let mut sorted: Vec<&String> = labels.iter().collect();
        sorted.sort();
        sorted.dedup();
        if labels.is_empty() || sorted.len() != labels.len() {
            return Err(MetricsError::InvalidLabels);
        }
        let n = labels.len();
        Ok(Self {
            labels,
            counts: vec![vec![0; n]; n],
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| MetricsError::UnknownLabel(label.to_string()))
    }

    pub fn add(&mut self, truth: &str, predicted: &str) -> Result<()> {
        let (t, p) = (self.index_of(truth)?, self.index_of(predicted)?);
        self.counts[t][p] += 1;
        Ok(())
    }

    pub fn get(&self, truth: &str, predicted: &str) -> Result<u64> {
        Ok(self.counts[self.index_of(truth)?][self.index_of(predicted)?])
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }
}

/// Tallies `pairs` of (truth, prediction) over the declared `labels`.
pub fn confusion_matrix<T, P>(labels: &[String], pairs: impl IntoIterator<Item = (T, P)>) -> Result<ConfusionMatrix>
where
    T: AsRef<str>,
    P: AsRef<str>,
{
    let mut cm = ConfusionMatrix::new(labels.to_vec())?;
    for (t, p) in pairs {
        cm.add(t.as_ref(), p.as_ref())?;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of samples whose true label is this one.
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: u64,
    pub accuracy: f64,
    pub per_label: Vec<LabelMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub roc_auc: Option<f64>,
    /// How `roc_auc` averages over labels, present whenever it is.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub roc_auc_averaging: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub map50: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub map50_95: Option<f64>,
}

impl MetricsReport {
    pub fn with_roc_auc(mut self, auc: f64) -> Self {
        self.roc_auc = Some(auc);
        self.roc_auc_averaging = Some(ROC_AUC_AVERAGING.to_string());
        self
    }

    pub fn with_map(mut self, map50: f64, map50_95: f64) -> Self {
        self.map50 = Some(map50);
        self.map50_95 = Some(map50_95);
        self
    }
}

/// Accuracy plus per-label and macro-averaged precision, recall and F1.
/// Any 0/0 ratio counts as zero.
pub fn classification_report(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let n = cm.labels.len();
    let per_label: Vec<LabelMetrics> = (0..n)
        .map(|i| {
            let tp = cm.counts[i][i] as f64;
            let predicted: u64 = (0..n).map(|t| cm.counts[t][i]).sum();
            let support: u64 = cm.counts[i].iter().sum();
            let precision = ratio(tp, predicted as f64);
            let recall = ratio(tp, support as f64);
            LabelMetrics {
                label: cm.labels[i].clone(),
                precision,
                recall,
                f1: ratio(2.0 * precision * recall, precision + recall),
                support,
            }
        })
        .collect();
    let mean = |f: fn(&LabelMetrics) -> f64| per_label.iter().map(f).sum::<f64>() / n as f64;
    Ok(MetricsReport {
        samples: total,
        accuracy: cm.trace() as f64 / total as f64,
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        per_label,
        roc_auc: None,
        roc_auc_averaging: None,
        map50: None,
        map50_95: None,
    })
}

/// One-vs-rest AUC for each label of the score vectors, `None` where the
/// label lacks positives or negatives among `truths`.
///
/// Computed as the Mann-Whitney statistic over average ranks, so tied
/// scores count one half.
pub fn roc_auc_per_label<S: AsRef<str>>(
    scores: &[ClassProbabilities],
    truths: &[S],
) -> Result<Vec<(String, Option<f64>)>> {
    if scores.len() != truths.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            truths: truths.len(),
        });
    }
    let Some(first) = scores.first() else {
        return Err(MetricsError::NoEligibleLabel);
    };
    let labels = first.labels();
    if scores.iter().any(|s| s.labels() != labels) {
        return Err(MetricsError::InconsistentScores);
    }
    if let Some(t) = truths.iter().find(|t| !labels.iter().any(|l| l == t.as_ref())) {
        return Err(MetricsError::UnknownLabel(t.as_ref().to_string()));
    }

    Ok(labels
        .iter()
        .enumerate()
        .map(|(k, label)| {
            let column: Vec<f64> = scores.iter().map(|s| s.probabilities()[k]).collect();
            let positive: Vec<bool> = truths.iter().map(|t| t.as_ref() == label).collect();
            (label.clone(), mann_whitney_auc(&column, &positive))
        })
        .collect())
}

/// Macro mean of [`roc_auc_per_label`] over the eligible labels.
pub fn roc_auc<S: AsRef<str>>(scores: &[ClassProbabilities], truths: &[S]) -> Result<f64> {
    let eligible: Vec<f64> = roc_auc_per_label(scores, truths)?
        .into_iter()
        .filter_map(|(_, auc)| auc)
        .collect();
    if eligible.is_empty() {
        return Err(MetricsError::NoEligibleLabel);
    }
    Ok(eligible.iter().sum::<f64>() / eligible.len() as f64)
}

fn mann_whitney_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the rank sum keeps tied average ranks integral.
    let mut doubled_rank_sum: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Ranks start+1..=end average to (start + 1 + end) / 2.
        let doubled_rank = (start + 1 + end) as u64;
        let tied_pos = order[start..end].iter().filter(|&&i| positive[i]).count() as u64;
        doubled_rank_sum += doubled_rank * tied_pos;
        start = end;
    }
    let (p, q) = (n_pos as u64, n_neg as u64);
    let doubled_u = doubled_rank_sum - p * (p + 1);
    Some(doubled_u as f64 / (2 * p * q) as f64)
}
