//! CSV reports: defect-distribution chi-square tests, ANOVA over image
//! adjustments, and per-label classification metrics.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use anyhow::{bail, Context};
use instqc_core::dataset::ContingencyTable;
use instqc_core::stats::{
    chi_square_independence, chi_square_uniform, cramers_v, levene_test, one_way_anova, Group, GroupSamples,
    TestResult,
};
use serde::Deserialize;

use crate::training::{EvaluationReport, StageReport};

pub const OVERALL_ROW: &str = "Overall Dataset";

/// One row of the defect-distribution table.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionRow {
    pub instrument: String,
    pub total_images: u64,
    pub test: TestResult,
    /// Effect size, only on the overall row.
    pub cramers_v: Option<f64>,
}

/// Per instrument, a goodness-of-fit test of its defect counts against a
/// uniform spread over the table's defect types; then an independence test
/// over the whole table. Instruments with fewer than two defect types or no
/// defective images are skipped with a warning.
pub fn defect_distribution(table: &ContingencyTable) -> anyhow::Result<Vec<DistributionRow>> {
    let mut rows = Vec::new();
    for (name, counts) in table.row_labels.iter().zip(&table.counts) {
        match chi_square_uniform(counts) {
            Ok(test) => rows.push(DistributionRow {
                instrument: name.clone(),
                total_images: counts.iter().sum(),
                test,
                cramers_v: None,
            }),
            Err(e) => tracing::warn!(instrument = %name, "skipped: {e}"),
        }
    }
    let overall = chi_square_independence(table).context("independence test over the full table")?;
    let v = cramers_v(overall.statistic, overall.n, table.row_labels.len(), table.col_labels.len())?;
    rows.push(DistributionRow {
        instrument: OVERALL_ROW.to_string(),
        total_images: table.total(),
        test: overall,
        cramers_v: Some(v),
    });
    Ok(rows)
}

fn df_text(test: &TestResult) -> String {
    match test.df {
        instqc_core::stats::DegreesOfFreedom::Single(d) => d.to_string(),
        instqc_core::stats::DegreesOfFreedom::Pair(a, b) => format!("{a};{b}"),
    }
}

pub fn write_distribution_csv(rows: &[DistributionRow], out: impl Write) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "Instrument",
        "Total Images",
        "Chi-Square Statistic",
        "Degrees of Freedom",
        "P-Value",
        "Cramer's V",
    ])?;
    for r in rows {
        w.write_record([
            r.instrument.clone(),
            r.total_images.to_string(),
            r.test.statistic.to_string(),
            df_text(&r.test),
            r.test.p_value.to_string(),
            r.cramers_v.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a count table: a header of column labels after one leading cell,
/// then one row label and its counts per line.
pub fn read_contingency_csv(input: impl Read) -> anyhow::Result<ContingencyTable> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let cols: Vec<String> = r.headers()?.iter().skip(1).map(str::to_string).collect();
    let (mut rows, mut counts) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let mut cells = rec.iter();
        rows.push(cells.next().unwrap_or_default().to_string());
        counts.push(
            cells
                .map(|c| c.parse::<u64>().with_context(|| format!("row {}: bad count {c:?}", i + 1)))
                .collect::<anyhow::Result<Vec<u64>>>()?,
        );
    }
    Ok(ContingencyTable::new(rows, cols, counts)?)
}

/// One accuracy measurement of an instrument under one adjustment level.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct AdjustmentObservation {
    pub instrument: String,
    pub adjustment: String,
    pub level: String,
    pub accuracy: f64,
}

pub fn read_observations(input: impl Read) -> anyhow::Result<Vec<AdjustmentObservation>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let rows = r.deserialize().collect::<Result<Vec<AdjustmentObservation>, _>>()?;
    if rows.is_empty() {
        bail!("no observations");
    }
    Ok(rows)
}

/// ANOVA and Levene results for one (instrument, adjustment) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AnovaCell {
    pub anova: TestResult,
    pub levene: TestResult,
}

/// Instruments and adjustments in first-appearance order, with a cell for
/// each combination that has data.
#[derive(Debug, Clone, PartialEq)]
pub struct AnovaTable {
    pub instruments: Vec<String>,
    pub adjustments: Vec<String>,
    pub cells: BTreeMap<(String, String), AnovaCell>,
}

fn push_unique(list: &mut Vec<String>, item: &str) {
    if !list.iter().any(|x| x == item) {
        list.push(item.to_string());
    }
}

/// Groups the observations of each (instrument, adjustment) by level and
/// runs a one-way ANOVA across levels, preceded by Levene's test.
pub fn adjustment_anova(observations: &[AdjustmentObservation]) -> anyhow::Result<AnovaTable> {
    let (mut instruments, mut adjustments) = (Vec::new(), Vec::new());
    let mut groups: BTreeMap<(String, String), Vec<Group>> = BTreeMap::new();
    for o in observations {
        push_unique(&mut instruments, &o.instrument);
        push_unique(&mut adjustments, &o.adjustment);
        let levels = groups.entry((o.instrument.clone(), o.adjustment.clone())).or_default();
        match levels.iter_mut().find(|g| g.name == o.level) {
            Some(g) => g.values.push(o.accuracy),
            None => levels.push(Group {
                name: o.level.clone(),
                values: vec![o.accuracy],
            }),
        }
    }
    let mut cells = BTreeMap::new();
    for (key, levels) in groups {
        let samples = GroupSamples::new(levels).with_context(|| format!("{} / {}", key.0, key.1))?;
        let levene = levene_test(&samples);
        if levene.p_value < 0.05 {
            tracing::warn!(
                instrument = %key.0,
                adjustment = %key.1,
                p = levene.p_value,
                "unequal variances across levels"
            );
        }
        cells.insert(key, AnovaCell {
            anova: one_way_anova(&samples),
            levene,
        });
    }
    Ok(AnovaTable {
        instruments,
        adjustments,
        cells,
    })
}

/// Wide table: one row per instrument, one p-value column per adjustment.
/// Missing combinations are left empty.
pub fn write_anova_csv(table: &AnovaTable, out: impl Write) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["Instrument".to_string()];
    header.extend(table.adjustments.iter().map(|a| format!("{} (p-value)", title_case(a))));
    w.write_record(&header)?;
    for inst in &table.instruments {
        let mut row = vec![inst.clone()];
        for adj in &table.adjustments {
            row.push(
                table
                    .cells
                    .get(&(inst.clone(), adj.clone()))
                    .map(|c| c.anova.p_value.to_string())
                    .unwrap_or_default(),
            );
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn title_case(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Per-label rows for each stage followed by a `macro` row. A label's
/// accuracy is its per-class accuracy (recall); the macro row carries the
/// overall accuracy and the macro ROC-AUC. Training accuracy is filled in
/// when `train` is given.
pub fn write_metrics_csv(test: &EvaluationReport, train: Option<&EvaluationReport>, out: impl Write) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "stage",
        "label",
        "support",
        "training_accuracy",
        "testing_accuracy",
        "precision",
        "recall",
        "f1",
        "roc_auc",
    ])?;
    let stages: [(&str, Option<&StageReport>, Option<&StageReport>); 2] = [
        ("instrument", Some(&test.instrument), train.map(|t| &t.instrument)),
        ("defect", test.defect.as_ref(), train.and_then(|t| t.defect.as_ref())),
    ];
    let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (stage, report, train_report) in stages {
        let Some(report) = report else { continue };
        let m = &report.metrics;
        for l in &m.per_label {
            let train_acc = train_report
                .and_then(|t| t.metrics.per_label.iter().find(|x| x.label == l.label))
                .map(|x| x.recall);
            let auc = report
                .label_roc_auc
                .iter()
                .find(|(name, _)| *name == l.label)
                .and_then(|(_, a)| *a);
            w.write_record([
                stage.to_string(),
                l.label.clone(),
                l.support.to_string(),
                num(train_acc),
                l.recall.to_string(),
                l.precision.to_string(),
                l.recall.to_string(),
                l.f1.to_string(),
                num(auc),
            ])?;
        }
        w.write_record([
            stage.to_string(),
            "macro".to_string(),
            m.samples.to_string(),
            num(train_report.map(|t| t.metrics.accuracy)),
            m.accuracy.to_string(),
            m.macro_precision.to_string(),
            m.macro_recall.to_string(),
            m.macro_f1.to_string(),
            num(m.roc_auc),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distribution_rows_end_with_overall() {
        let table = read_contingency_csv(
            "instrument,Scratches,Pores\nScalpel,30,10\nScissors,20,20\n".as_bytes(),
        )
        .unwrap();
        let rows = defect_distribution(&table).unwrap();
        assert_eq!(rows.len(), 3);
        // (30-20)^2/20 + (10-20)^2/20
        assert!((rows[0].test.statistic - 10.0).abs() < 1e-12);
        assert_eq!(rows[0].total_images, 40);
        assert_eq!(rows[1].test.statistic, 0.0);
        assert_eq!(rows[2].instrument, OVERALL_ROW);
        assert_eq!(rows[2].total_images, 80);
        // Expected counts 25 and 15 in each row: 2 * (5^2/25 + 5^2/15) = 16/3.
        assert!((rows[2].test.statistic - 16.0 / 3.0).abs() < 1e-12);
        assert!((rows[2].cramers_v.unwrap() - (16.0f64 / 3.0 / 80.0).sqrt()).abs() < 1e-12);

        let mut out = Vec::new();
        write_distribution_csv(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("Instrument,Total Images,Chi-Square Statistic,"));
        assert!(text.lines().last().unwrap().starts_with("Overall Dataset,80,"));
    }

    #[test]
    fn anova_table_is_wide() {
        let mut csv = String::from("instrument,adjustment,level,accuracy\n");
        for (inst, shift) in [("Carver", 0.0), ("Scissors", 0.1)] {
            for adj in ["brightness", "contrast"] {
                for (level, base) in [("low", 0.80), ("high", 0.90)] {
                    for k in 0..3 {
                        let spread = if adj == "contrast" { 0.05 } else { 0.0 };
                        csv += &format!("{inst},{adj},{level},{}\n", base + shift + spread * k as f64 + 0.01 * k as f64);
                    }
                }
            }
        }
        let table = adjustment_anova(&read_observations(csv.as_bytes()).unwrap()).unwrap();
        assert_eq!(table.instruments, ["Carver", "Scissors"]);
        assert_eq!(table.adjustments, ["brightness", "contrast"]);
        assert_eq!(table.cells.len(), 4);
        let mut out = Vec::new();
        write_anova_csv(&table, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "Instrument,Brightness (p-value),Contrast (p-value)"
        );
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn anova_needs_replicates() {
        let csv = "instrument,adjustment,level,accuracy\nA,b,x,0.5\nA,b,y,0.6\n";
        assert!(adjustment_anova(&read_observations(csv.as_bytes()).unwrap()).is_err());
    }
}
