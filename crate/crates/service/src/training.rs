//! Baseline training from a labeled manifest, and per-split evaluation of an
//! assembled pipeline.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context};
use instqc_core::dataset::{
    stratified_split, AnnotationRecord, DatasetManifest, DefectLabel, InstrumentLabel, Split,
};
use instqc_core::imaging::{load_png, NormalizedTensor, RasterImage};
use instqc_core::metrics::{classification_report, confusion_matrix, roc_auc, roc_auc_per_label, MetricsReport};
use instqc_core::model::{
    baseline_fit, extract_features, write_label_file, BaselineModel, Checkpoint, ClassProbabilities,
    ClassifierBackend, FeatureSample, TrainingConfig, TrainingLog,
};
use instqc_core::pipeline::{
    classify_defect, classify_instrument, preprocess, Disposition, PipelineConfig, PreprocessConfig,
};
use instqc_core::seed;
use serde::Serialize;

use crate::backends::{defect_stem, ConstantBackend, INSTRUMENT_STEM};
use crate::config::Config;

pub fn load_record_image(root: &Path, record: &AnnotationRecord) -> anyhow::Result<RasterImage> {
    let path = root.join(&record.image_path);
    load_png(&path).with_context(|| format!("record {}: {}", record.record_id, path.display()))
}

/// The manifest itself when every record has a split, otherwise a fresh
/// stratified split from the configured ratios and seed.
pub fn ensure_split(manifest: &DatasetManifest, config: &Config) -> anyhow::Result<DatasetManifest> {
    if manifest.is_split() {
        Ok(manifest.clone())
    } else {
        Ok(stratified_split(manifest, config.split_ratios(), config.split.seed)?)
    }
}

fn labels_of(record: &AnnotationRecord) -> anyhow::Result<(InstrumentLabel, DefectLabel)> {
    record
        .labels()
        .with_context(|| format!("record {} is not resolved", record.record_id))
}

/// Baseline feature vectors of every train and val record, keyed by id.
pub fn extract_training_features(
    manifest: &DatasetManifest,
    root: &Path,
    preprocessing: &PreprocessConfig,
) -> anyhow::Result<BTreeMap<String, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for split in [Split::Train, Split::Val] {
        for record in manifest.in_split(split) {
            let tensor = preprocess(&load_record_image(root, record)?, preprocessing)?;
            out.insert(record.record_id.clone(), extract_features(&tensor));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainedStage {
    pub model: BaselineModel,
    pub checkpoint: Checkpoint,
    pub log: TrainingLog,
}

#[derive(Debug, Clone)]
pub enum DefectStage {
    Trained(Box<TrainedStage>),
    /// Every training record of the instrument carries this one label.
    Constant(DefectLabel),
}

#[derive(Debug, Clone)]
pub struct TrainedBaselines {
    pub instrument: TrainedStage,
    pub defects: BTreeMap<InstrumentLabel, DefectStage>,
}

/// Training samples for the records `keep` selects, labeled by `label`'s
/// index in `labels`.
fn samples<L: Ord + Copy>(
    manifest: &DatasetManifest,
    split: Split,
    features: &BTreeMap<String, Vec<f64>>,
    labels: &[L],
    pick: impl Fn(&AnnotationRecord) -> anyhow::Result<Option<L>>,
) -> anyhow::Result<Vec<FeatureSample>> {
    let mut out = Vec::new();
    for record in manifest.in_split(split) {
        let Some(label) = pick(record)? else { continue };
        let Some(index) = labels.iter().position(|l| *l == label) else { continue };
        let features = features
            .get(&record.record_id)
            .with_context(|| format!("no features for {}", record.record_id))?;
        out.push(FeatureSample {
            features: features.clone(),
            label: index,
        });
    }
    Ok(out)
}

fn fit(
    name: &str,
    labels: Vec<String>,
    train: &[FeatureSample],
    val: &[FeatureSample],
    config: &TrainingConfig,
) -> anyhow::Result<TrainedStage> {
    // Validation falls back to the training set when a stage has no
    // validation records of its own.
    let val = if val.is_empty() { train } else { val };
    let (model, checkpoint, log) =
        baseline_fit(name, labels, train, val, config).with_context(|| format!("training {name}"))?;
    Ok(TrainedStage { model, checkpoint, log })
}

/// One instrument model over the instruments seen in training, then one
/// defect model per instrument over the defects seen with it.
pub fn train_baselines(
    manifest: &DatasetManifest,
    features: &BTreeMap<String, Vec<f64>>,
    config: &TrainingConfig,
) -> anyhow::Result<TrainedBaselines> {
    let mut seen: BTreeMap<InstrumentLabel, BTreeSet<DefectLabel>> = BTreeMap::new();
    for record in manifest.in_split(Split::Train) {
        let (i, d) = labels_of(record)?;
        seen.entry(i).or_default().insert(d);
    }
    if seen.len() < 2 {
        bail!("the training split covers {} instrument label(s); need at least 2", seen.len());
    }
    let instruments: Vec<InstrumentLabel> = seen.keys().copied().collect();
    let pick_instrument = |r: &AnnotationRecord| Ok(Some(labels_of(r)?.0));
    let instrument = fit(
        INSTRUMENT_STEM,
        instruments.iter().map(|l| l.name().to_string()).collect(),
        &samples(manifest, Split::Train, features, &instruments, pick_instrument)?,
        &samples(manifest, Split::Val, features, &instruments, pick_instrument)?,
        config,
    )?;

    let mut defects = BTreeMap::new();
    for (&inst, defect_set) in &seen {
        if inst.is_miscellaneous() {
            continue;
        }
        let labels: Vec<DefectLabel> = defect_set.iter().copied().collect();
        let stage = if let [only] = labels[..] {
            DefectStage::Constant(only)
        } else {
            let pick = |r: &AnnotationRecord| {
                let (i, d) = labels_of(r)?;
                Ok((i == inst).then_some(d))
            };
            let stage_config = TrainingConfig {
                seed: seed::derive_str(config.seed, &inst.slug()),
                ..config.clone()
            };
            DefectStage::Trained(Box::new(fit(
                &format!("defect/{}", inst.slug()),
                labels.iter().map(|l| l.name().to_string()).collect(),
                &samples(manifest, Split::Train, features, &labels, pick)?,
                &samples(manifest, Split::Val, features, &labels, pick)?,
                &stage_config,
            )?))
        };
        defects.insert(inst, stage);
    }
    Ok(TrainedBaselines { instrument, defects })
}

#[derive(Debug, Serialize)]
struct TrainingSummary<'a> {
    instrument: &'a TrainingLog,
    defect: BTreeMap<String, Option<&'a TrainingLog>>,
}

impl TrainedBaselines {
    pub fn pipeline(&self, config: &Config) -> anyhow::Result<PipelineConfig> {
        let registry = self
            .defects
            .iter()
            .map(|(&inst, stage)| {
                let backend: Arc<dyn ClassifierBackend> = match stage {
                    DefectStage::Trained(s) => Arc::new(s.model.clone()),
                    DefectStage::Constant(label) => {
                        Arc::new(ConstantBackend::new(format!("defect/{}", inst.slug()), label.name()))
                    }
                };
                (inst, backend)
            })
            .collect();
        Ok(PipelineConfig::new(
            Arc::new(self.instrument.model.clone()),
            registry,
            config.pipeline.confidence_threshold,
            config.preprocess,
        )?)
    }

    /// Writes checkpoints, label files and `training_log.json`, removing any
    /// model file that would shadow them.
    pub fn save(&self, model_dir: &Path) -> anyhow::Result<()> {
        let write_stage = |stem: &Path, stage: Option<&TrainedStage>, labels: &[String]| -> anyhow::Result<()> {
            let base = model_dir.join(stem);
            for ext in ["onnx", "ckpt", "labels"] {
                let stale = base.with_extension(ext);
                if stale.exists() {
                    std::fs::remove_file(&stale)?;
                }
            }
            write_label_file(&base.with_extension("labels"), labels)?;
            if let Some(stage) = stage {
                stage.checkpoint.save(&base.with_extension("ckpt"))?;
            }
            Ok(())
        };
        write_stage(Path::new(INSTRUMENT_STEM), Some(&self.instrument), self.instrument.model.labels())?;
        let mut summary = TrainingSummary {
            instrument: &self.instrument.log,
            defect: BTreeMap::new(),
        };
        for (&inst, stage) in &self.defects {
            match stage {
                DefectStage::Trained(s) => {
                    write_stage(&defect_stem(inst), Some(s), s.model.labels())?;
                    summary.defect.insert(inst.name().to_string(), Some(&s.log));
                }
                DefectStage::Constant(label) => {
                    write_stage(&defect_stem(inst), None, &[label.name().to_string()])?;
                    summary.defect.insert(inst.name().to_string(), None);
                }
            }
        }
        std::fs::write(model_dir.join("training_log.json"), serde_json::to_vec_pretty(&summary)?)?;
        Ok(())
    }
}

/// One stage's metrics plus the one-vs-rest AUC of each label, `None`
/// where a label lacks positives or negatives.
#[derive(Debug, Clone, Serialize)]
pub struct StageReport {
    #[serde(flatten)]
    pub metrics: MetricsReport,
    pub label_roc_auc: Vec<(String, Option<f64>)>,
}

/// Metrics of both stages on one split.
#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub split: Split,
    pub samples: usize,
    /// Top instrument label against the truth.
    pub instrument: StageReport,
    /// Top defect label of the true instrument's defect model against the
    /// truth; `Miscellaneous` records are excluded.
    pub defect: Option<StageReport>,
    /// Fraction of records whose dispositions accept both true labels
    /// (an unsure defect counts as "no defect").
    pub end_to_end_accuracy: f64,
    pub flagged_for_review: usize,
    /// Dispositions that disagree with the threshold rules.
    pub disposition_violations: usize,
}

/// Whether `d` is what the threshold rules prescribe for top prediction
/// `(label, c)` at threshold `t`.
pub fn instrument_rule_holds(d: &Disposition<InstrumentLabel>, label: InstrumentLabel, c: f64, t: f64) -> bool {
    match *d {
        Disposition::FlaggedForReview { label: l, confidence } => c < t && l == label && confidence == c,
        Disposition::NoInstrumentDetected => c >= t && label.is_miscellaneous(),
        Disposition::Accepted { label: l, confidence } => c >= t && l == label && confidence == c,
        Disposition::NoDefectDetected => false,
    }
}

pub fn defect_rule_holds(d: &Disposition<DefectLabel>, label: DefectLabel, c: f64, t: f64) -> bool {
    match *d {
        Disposition::NoDefectDetected => c < t && label.is_defect(),
        Disposition::FlaggedForReview { label: l, confidence } => {
            c < t && !label.is_defect() && l == label && confidence == c
        }
        Disposition::Accepted { label: l, confidence } => c >= t && l == label && confidence == c,
        Disposition::NoInstrumentDetected => false,
    }
}

fn top_label<L: std::str::FromStr>(probs: &ClassProbabilities) -> anyhow::Result<(L, f64)> {
    let (name, c) = probs.top();
    let label = name.parse().map_err(|_| anyhow::anyhow!("model emitted unknown label {name:?}"))?;
    Ok((label, c))
}

/// Zero-pads `probs` onto `labels` so scores from per-instrument models
/// share one label set.
fn align(probs: &ClassProbabilities, labels: &[String]) -> anyhow::Result<ClassProbabilities> {
    let values = labels.iter().map(|l| probs.get(l).unwrap_or(0.0)).collect();
    Ok(ClassProbabilities::new(labels.to_vec(), values)?)
}

fn stage_report(order: &[String], truths: &[String], probs: &[ClassProbabilities]) -> anyhow::Result<StageReport> {
    let present: BTreeSet<&String> = truths
        .iter()
        .chain(probs.iter().flat_map(|p| p.labels()))
        .collect();
    let labels: Vec<String> = order.iter().filter(|l| present.contains(l)).cloned().collect();
    let pairs = truths.iter().zip(probs).map(|(t, p)| (t.as_str(), p.top().0));
    let report = classification_report(&confusion_matrix(&labels, pairs)?)?;
    let aligned = probs.iter().map(|p| align(p, &labels)).collect::<anyhow::Result<Vec<_>>>()?;
    // AUC is undefined when no label has both positives and negatives.
    let metrics = match roc_auc(&aligned, truths) {
        Ok(auc) => report.with_roc_auc(auc),
        Err(_) => report,
    };
    Ok(StageReport {
        metrics,
        label_roc_auc: roc_auc_per_label(&aligned, truths)?,
    })
}

pub fn evaluate(
    manifest: &DatasetManifest,
    split: Split,
    root: &Path,
    pipeline: &PipelineConfig,
) -> anyhow::Result<EvaluationReport> {
    let t = pipeline.confidence_threshold;
    let (mut inst_truths, mut inst_probs) = (Vec::new(), Vec::new());
    let (mut def_truths, mut def_probs) = (Vec::new(), Vec::new());
    let (mut correct, mut flagged, mut violations) = (0usize, 0usize, 0usize);
    let records: Vec<&AnnotationRecord> = manifest.in_split(split).collect();
    if records.is_empty() {
        bail!("the {split:?} split is empty");
    }
    for record in &records {
        let (true_inst, true_def) = labels_of(record)?;
        let tensor: NormalizedTensor = preprocess(&load_record_image(root, record)?, &pipeline.preprocess)?;
        let (inst_disp, probs) = classify_instrument(&tensor, pipeline)?;
        let (top_inst, c) = top_label::<InstrumentLabel>(&probs)?;
        violations += usize::from(!instrument_rule_holds(&inst_disp, top_inst, c, t));
        flagged += usize::from(inst_disp.is_flagged());
        inst_truths.push(true_inst.name().to_string());
        inst_probs.push(probs);

        if true_inst.is_miscellaneous() {
            correct += usize::from(inst_disp == Disposition::NoInstrumentDetected);
            continue;
        }
        let (def_disp, probs) = classify_defect(&tensor, true_inst, pipeline)?;
        let (top_def, c) = top_label::<DefectLabel>(&probs)?;
        violations += usize::from(!defect_rule_holds(&def_disp, top_def, c, t));
        def_truths.push(true_def.name().to_string());
        def_probs.push(probs);

        if inst_disp.accepted_label() == Some(true_inst) {
            // The pipeline runs the defect stage only here, with the same
            // model the stage-wise evaluation just used.
            flagged += usize::from(def_disp.is_flagged());
            let defect_ok = match def_disp {
                Disposition::Accepted { label, .. } => label == true_def,
                Disposition::NoDefectDetected => true_def == DefectLabel::NoDefect,
                _ => false,
            };
            correct += usize::from(defect_ok);
        }
    }
    let inst_order: Vec<String> = InstrumentLabel::ALL.iter().map(|l| l.name().to_string()).collect();
    let def_order: Vec<String> = DefectLabel::ALL.iter().map(|l| l.name().to_string()).collect();
    Ok(EvaluationReport {
        split,
        samples: records.len(),
        instrument: stage_report(&inst_order, &inst_truths, &inst_probs)?,
        defect: if def_truths.is_empty() {
            None
        } else {
            Some(stage_report(&def_order, &def_truths, &def_probs)?)
        },
        end_to_end_accuracy: correct as f64 / records.len() as f64,
        flagged_for_review: flagged,
        disposition_violations: violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rules_match_the_pipeline() {
        use instqc_core::pipeline::{defect_disposition, instrument_disposition};
        for i in 0..=100 {
            let c = i as f64 / 100.0;
            for &l in &InstrumentLabel::ALL {
                assert!(instrument_rule_holds(&instrument_disposition(l, c, 0.5), l, c, 0.5));
            }
            for &l in &DefectLabel::ALL {
                assert!(defect_rule_holds(&defect_disposition(l, c, 0.5), l, c, 0.5));
            }
        }
        let wrong = Disposition::Accepted {
            label: InstrumentLabel::Scalpel,
            confidence: 0.4,
        };
        assert!(!instrument_rule_holds(&wrong, InstrumentLabel::Scalpel, 0.4, 0.5));
    }

    #[test]
    fn align_pads_with_zeros() {
        let p = ClassProbabilities::new(vec!["b".into()], vec![1.0]).unwrap();
        let a = align(&p, &["a".into(), "b".into()]).unwrap();
        assert_eq!(a.probabilities(), [0.0, 1.0]);
    }
}
