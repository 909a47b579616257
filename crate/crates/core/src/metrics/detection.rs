use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{MetricsError, Result};

/// Axis-aligned box in pixel coordinates, `max` exclusive of `min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

#[derive(Deserialize)]
struct RawBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl TryFrom<RawBox> for BoundingBox {
    type Error = MetricsError;

    fn try_from(r: RawBox) -> Result<Self> {
        Self::new(r.x_min, r.y_min, r.x_max, r.y_max)
    }
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !(finite && x_max > x_min && y_max > y_min) {
            return Err(MetricsError::InvalidBox {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

/// Intersection over union; zero for disjoint or merely touching boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let h = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    inter / (a.area() + b.area() - inter)
}

/// A predicted box. Detections only match truths from the same image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub label: String,
    pub confidence: f64,
}

impl Detection {
    pub fn new(image_id: impl Into<String>, bbox: BoundingBox, label: impl Into<String>, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(MetricsError::InvalidConfidence(confidence));
        }
        Ok(Self {
            image_id: image_id.into(),
            bbox,
            label: label.into(),
            confidence,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub label: String,
}

impl GroundTruth {
    pub fn new(image_id: impl Into<String>, bbox: BoundingBox, label: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            bbox,
            label: label.into(),
        }
    }
}

/// The ten IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// Per-label AP at `iou_threshold`, for every label that has at least one
/// truth. Labels seen only among detections have no defined AP and are left
/// out.
///
/// Detections are visited by descending confidence, ties by input order.
/// Each claims the unmatched same-image, same-label truth of highest IoU
/// (earliest on ties) provided that IoU reaches the threshold. AP is the area
/// under the all-points interpolated precision-recall curve, which reduces to
/// the mean over truths of the envelope precision at the rank that matched
/// each truth (zero for truths never matched).
pub fn average_precision(
    dets: &[Detection],
    truths: &[GroundTruth],
    iou_threshold: f64,
) -> Result<BTreeMap<String, f64>> {
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(MetricsError::InvalidThreshold(iou_threshold));
    }
    let mut by_label: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, t) in truths.iter().enumerate() {
        by_label.entry(&t.label).or_default().1.push(i);
    }
    for (i, d) in dets.iter().enumerate() {
        if let Some(entry) = by_label.get_mut(d.label.as_str()) {
            entry.0.push(i);
        }
    }
    Ok(by_label
        .into_iter()
        .map(|(label, (det_idx, truth_idx))| {
            let hits = match_detections(dets, &det_idx, truths, &truth_idx, iou_threshold);
            (label.to_string(), ap_from_hits(&hits, truth_idx.len()))
        })
        .collect())
}

/// True-positive flags of the label's detections in ranked order.
fn match_detections(
    dets: &[Detection],
    det_idx: &[usize],
    truths: &[GroundTruth],
    truth_idx: &[usize],
    threshold: f64,
) -> Vec<bool> {
    let mut ranked = det_idx.to_vec();
    ranked.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence).then(a.cmp(&b)));
    let mut taken = vec![false; truth_idx.len()];
    ranked
        .iter()
        .map(|&d| {
            let det = &dets[d];
            let mut best: Option<(usize, f64)> = None;
            for (k, &t) in truth_idx.iter().enumerate() {
                if taken[k] || truths[t].image_id != det.image_id {
                    continue;
                }
                let overlap = iou(&det.bbox, &truths[t].bbox);
                if overlap >= threshold && best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((k, overlap));
                }
            }
            best.map(|(k, _)| taken[k] = true).is_some()
        })
        .collect()
}

fn ap_from_hits(hits: &[bool], n_truths: usize) -> f64 {
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (rank, &hit) in hits.iter().enumerate() {
        tp += usize::from(hit);
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    // Envelope: best precision at this rank or any later one.
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let sum: f64 = hits.iter().zip(&precision).filter(|(&h, _)| h).map(|(_, &p)| p).sum();
    sum / n_truths as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanAveragePrecision {
    /// Mean AP over labels at IoU 0.50.
    pub map50: f64,
    /// Mean of the per-threshold mAP over [`iou_thresholds`].
    pub map50_95: f64,
    /// The per-threshold mAP, aligned with [`iou_thresholds`].
    pub per_threshold: Vec<f64>,
}

/// mAP@50 and mAP@50-95, or `None` when there are no truths at all.
pub fn map_range(dets: &[Detection], truths: &[GroundTruth]) -> Option<MeanAveragePrecision> {
    if truths.is_empty() {
        return None;
    }
    let per_threshold: Vec<f64> = iou_thresholds()
        .iter()
        .map(|&t| {
            let ap = average_precision(dets, truths, t).expect("thresholds lie in (0, 1)");
            ap.values().sum::<f64>() / ap.len() as f64
        })
        .collect();
    Some(MeanAveragePrecision {
        map50: per_threshold[0],
        map50_95: per_threshold.iter().sum::<f64>() / per_threshold.len() as f64,
        per_threshold,
    })
}
