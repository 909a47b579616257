//! Hypothesis tests for dataset validation: chi-square independence and
//! goodness of fit with Cramér's V, one-way ANOVA, and Levene's test.

mod distributions;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::dataset::ContingencyTable;

pub use distributions::{beta_inc, chi2_sf, f_sf, gamma_q, ln_gamma};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("degenerate table: {0}")]
    DegenerateTable(String),
    #[error("invalid groups: {0}")]
    InvalidGroups(String),
    #[error("invalid arguments: {0}")]
    InvalidArguments(String),
}

pub type Result<T, E = StatsError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DegreesOfFreedom {
    Single(u64),
    Pair(u64, u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: String,
    /// Non-negative; infinite for the zero-within-variance case, which
    /// serializes as `null`.
    #[serde(deserialize_with = "null_as_infinity")]
    pub statistic: f64,
    pub df: DegreesOfFreedom,
    pub p_value: f64,
    /// Observations the test used.
    pub n: u64,
    /// Variant of the test when more than one is in common use.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub variant: Option<String>,
    /// Set when the statistic hit a division by zero and `p_value` was
    /// assigned by convention.
    #[serde(default)]
    pub degenerate: bool,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

fn null_as_infinity<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

/// Sum of non-negative terms in ascending order, so any permutation of the
/// inputs yields the same bits.
fn ordered_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// Pearson's chi-square test of independence on a contingency table.
///
/// Rows and columns whose marginal total is zero are dropped first, each
/// with a warning, since their expected counts would be zero.
pub fn chi_square_independence(table: &ContingencyTable) -> Result<TestResult> {
    let (row_sums, col_sums) = (table.row_sums(), table.col_sums());
    let mut warnings = Vec::new();
    let rows: Vec<usize> = (0..row_sums.len()).filter(|&i| row_sums[i] > 0).collect();
    let cols: Vec<usize> = (0..col_sums.len()).filter(|&j| col_sums[j] > 0).collect();
    for (i, _) in row_sums.iter().enumerate().filter(|(_, &s)| s == 0) {
        warnings.push(format!("dropped row {:?} with zero total", table.row_labels[i]));
    }
    for (j, _) in col_sums.iter().enumerate().filter(|(_, &s)| s == 0) {
        warnings.push(format!("dropped column {:?} with zero total", table.col_labels[j]));
    }
    if rows.len() < 2 || cols.len() < 2 {
        return Err(StatsError::DegenerateTable(format!(
            "{} non-empty rows and {} non-empty columns, need at least 2 of each",
            rows.len(),
            cols.len()
        )));
    }

    let n = table.total();
    let total = n as f64;
    let mut terms = Vec::with_capacity(rows.len() * cols.len());
    for &i in &rows {
        for &j in &cols {
            let expected = row_sums[i] as f64 * col_sums[j] as f64 / total;
            let diff = table.counts[i][j] as f64 - expected;
            terms.push(diff * diff / expected);
        }
    }
    let statistic = ordered_sum(terms);
    let df = ((rows.len() - 1) * (cols.len() - 1)) as u64;
    Ok(TestResult {
        test: "chi_square_independence".into(),
        statistic,
        df: DegreesOfFreedom::Single(df),
        p_value: chi2_sf(statistic, df as f64),
        n,
        variant: None,
        degenerate: false,
        warnings,
    })
}

/// Pearson's chi-square goodness-of-fit test of `observed` counts against
/// the category probabilities `expected` (normalized if they do not sum to
/// one).
pub fn chi_square_goodness_of_fit(observed: &[u64], expected: &[f64]) -> Result<TestResult> {
    if observed.len() < 2 || observed.len() != expected.len() {
        return Err(StatsError::InvalidArguments(format!(
            "{} observed counts for {} expected probabilities, need at least 2",
            observed.len(),
            expected.len()
        )));
    }
    if !expected.iter().all(|p| p.is_finite() && *p > 0.0) {
        return Err(StatsError::InvalidArguments("expected probabilities must be positive".into()));
    }
    let n: u64 = observed.iter().sum();
    if n == 0 {
        return Err(StatsError::InvalidArguments("no observations".into()));
    }
    let mass: f64 = expected.iter().sum();
    let terms = observed
        .iter()
        .zip(expected)
        .map(|(&o, &p)| {
            let e = n as f64 * p / mass;
            let diff = o as f64 - e;
            diff * diff / e
        })
        .collect();
    let statistic = ordered_sum(terms);
    let df = observed.len() as u64 - 1;
    Ok(TestResult {
        test: "chi_square_goodness_of_fit".into(),
        statistic,
        df: DegreesOfFreedom::Single(df),
        p_value: chi2_sf(statistic, df as f64),
        n,
        variant: None,
        degenerate: false,
        warnings: Vec::new(),
    })
}

/// Goodness of fit against equal probabilities for every category.
pub fn chi_square_uniform(observed: &[u64]) -> Result<TestResult> {
    chi_square_goodness_of_fit(observed, &vec![1.0; observed.len()])
}

/// Cramér's V for a chi-square `statistic` over `n` observations in an
/// `r` x `c` table.
pub fn cramers_v(statistic: f64, n: u64, r: usize, c: usize) -> Result<f64> {
    let k = r.min(c).saturating_sub(1);
    if n == 0 || k == 0 {
        return Err(StatsError::InvalidArguments(format!("n = {n} on a {r}x{c} table")));
    }
    if !(statistic.is_finite() && statistic >= 0.0) {
        return Err(StatsError::InvalidArguments(format!("statistic {statistic}")));
    }
    Ok((statistic / (n as f64 * k as f64)).sqrt().min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    pub values: Vec<f64>,
}

/// Two or more named groups of at least two finite observations each.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSamples {
    groups: Vec<Group>,
}

impl GroupSamples {
    pub fn new(groups: Vec<Group>) -> Result<Self> {
        if groups.len() < 2 {
            return Err(StatsError::InvalidGroups(format!("{} groups, need at least 2", groups.len())));
        }
        for g in &groups {
            if g.values.len() < 2 {
                return Err(StatsError::InvalidGroups(format!(
                    "group {:?} has {} observations, need at least 2",
                    g.name,
                    g.values.len()
                )));
            }
            if !g.values.iter().all(|v| v.is_finite()) {
                return Err(StatsError::InvalidGroups(format!("group {:?} has a non-finite value", g.name)));
            }
        }
        Ok(Self { groups })
    }

    /// Unnamed groups, called `g0`, `g1`, and so on.
    pub fn from_values(values: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(
            values
                .into_iter()
                .enumerate()
                .map(|(i, values)| Group {
                    name: format!("g{i}"),
                    values,
                })
                .collect(),
        )
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }
}

impl<'de> Deserialize<'de> for GroupSamples {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            groups: Vec<Group>,
        }
        Self::new(Raw::deserialize(d)?.groups).map_err(serde::de::Error::custom)
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// F statistic of `groups` with the conventions for zero within-group
/// variance applied.
fn anova_core(test: &str, groups: &[&[f64]]) -> TestResult {
    let k = groups.len();
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / n as f64;
    let means: Vec<f64> = groups.iter().map(|g| mean(g)).collect();
    let df = DegreesOfFreedom::Pair(k as u64 - 1, (n - k) as u64);
    let mut result = TestResult {
        test: test.into(),
        statistic: 0.0,
        df,
        p_value: 1.0,
        n: n as u64,
        variant: None,
        degenerate: false,
        warnings: Vec::new(),
    };

    // Constancy is tested on the values directly because rounding can leave
    // a residue of a few ulps in the sums of squares.
    let first = groups[0][0];
    if groups.iter().all(|g| g.iter().all(|&v| v == first)) {
        result.degenerate = true;
        result.warnings.push("all observations are identical".into());
        return result;
    }
    if groups.iter().all(|g| g.iter().all(|&v| v == g[0])) {
        result.statistic = f64::INFINITY;
        result.p_value = 0.0;
        result.degenerate = true;
        result.warnings.push("zero within-group variance with differing group means".into());
        return result;
    }

    let ssb: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.len() as f64 * (m - grand).powi(2))
        .sum();
    let ssw: f64 = groups
        .iter()
        .zip(&means)
        .flat_map(|(g, &m)| g.iter().map(move |v| (v - m).powi(2)))
        .sum();
    let (d1, d2) = ((k - 1) as f64, (n - k) as f64);
    result.statistic = (ssb / d1) / (ssw / d2);
    result.p_value = f_sf(result.statistic, d1, d2);
    result
}

/// One-way ANOVA across the groups.
///
/// When every observation is equal the result is F = 0, p = 1; when only
/// the within-group variance vanishes it is F = infinity, p = 0. Both set
/// `degenerate`.
pub fn one_way_anova(samples: &GroupSamples) -> TestResult {
    let groups: Vec<&[f64]> = samples.groups.iter().map(|g| g.values.as_slice()).collect();
    anova_core("one_way_anova", &groups)
}

/// Levene's test for equal variances: the ANOVA F statistic computed on
/// absolute deviations from each group's mean.
pub fn levene_test(samples: &GroupSamples) -> TestResult {
    let deviations: Vec<Vec<f64>> = samples
        .groups
        .iter()
        .map(|g| {
            let m = mean(&g.values);
            g.values.iter().map(|v| (v - m).abs()).collect()
        })
        .collect();
    let groups: Vec<&[f64]> = deviations.iter().map(Vec::as_slice).collect();
    let mut result = anova_core("levene", &groups);
    result.variant = Some("mean".into());
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(counts: Vec<Vec<u64>>) -> ContingencyTable {
        ContingencyTable::from_counts(counts).unwrap()
    }

    #[test]
    fn chi_square_fixtures() {
        let r = chi_square_independence(&table(vec![vec![10, 20], vec![20, 10]])).unwrap();
        assert!((r.statistic - 20.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.df, DegreesOfFreedom::Single(1));
        assert!((r.p_value - 0.009823274507519235).abs() < 1e-12);

        let r = chi_square_independence(&table(vec![vec![10, 20], vec![20, 40]])).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
    }

    #[test]
    fn zero_marginals_are_dropped() {
        let r = chi_square_independence(&table(vec![vec![10, 0, 20], vec![0, 0, 0], vec![20, 0, 10]])).unwrap();
        assert_eq!(r.warnings.len(), 2);
        assert_eq!(r.df, DegreesOfFreedom::Single(1));
        assert!((r.statistic - 20.0 / 3.0).abs() < 1e-12);
        assert!(matches!(
            chi_square_independence(&table(vec![vec![5, 5], vec![0, 0]])),
            Err(StatsError::DegenerateTable(_))
        ));
    }

    #[test]
    fn goodness_of_fit() {
        let r = chi_square_uniform(&[30, 20, 10]).unwrap();
        assert_eq!(r.statistic, 10.0);
        assert!((r.p_value - 0.006737946999085468).abs() < 1e-12);
        assert_eq!(chi_square_uniform(&[7, 7, 7, 7]).unwrap().p_value, 1.0);
        assert!(chi_square_uniform(&[3]).is_err());
        assert!(chi_square_uniform(&[0, 0]).is_err());
    }

    #[test]
    fn cramers_v_fixtures() {
        assert_eq!(cramers_v(0.0, 60, 2, 2).unwrap(), 0.0);
        let perfect = chi_square_independence(&table(vec![vec![15, 0], vec![0, 15]])).unwrap();
        assert_eq!(cramers_v(perfect.statistic, 30, 2, 2).unwrap(), 1.0);
        assert!((cramers_v(20.0 / 3.0, 60, 2, 2).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!(cramers_v(1.0, 10, 1, 5).is_err());
        assert!(cramers_v(1.0, 0, 2, 2).is_err());
    }

    #[test]
    fn anova_fixtures() {
        let r = one_way_anova(&GroupSamples::from_values(vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap());
        assert!((r.statistic - 13.5).abs() < 1e-12);
        assert_eq!(r.df, DegreesOfFreedom::Pair(1, 4));
        assert!((r.p_value - 0.02131164112875672).abs() < 1e-12);

        let same = GroupSamples::from_values(vec![vec![1.0, 2.0, 3.0]; 2]).unwrap();
        let r = one_way_anova(&same);
        assert_eq!((r.statistic, r.p_value, r.degenerate), (0.0, 1.0, false));
    }

    #[test]
    fn anova_degenerate_cases() {
        let r = one_way_anova(&GroupSamples::from_values(vec![vec![2.0; 3], vec![2.0; 4]]).unwrap());
        assert_eq!((r.statistic, r.p_value, r.degenerate), (0.0, 1.0, true));
        let r = one_way_anova(&GroupSamples::from_values(vec![vec![2.0; 3], vec![5.0; 4]]).unwrap());
        assert_eq!((r.statistic, r.p_value, r.degenerate), (f64::INFINITY, 0.0, true));
    }

    #[test]
    fn levene_fixtures() {
        let r = levene_test(&GroupSamples::from_values(vec![vec![1.0, 3.0], vec![11.0, 13.0]]).unwrap());
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        assert_eq!(r.variant.as_deref(), Some("mean"));

        let r = levene_test(&GroupSamples::from_values(vec![vec![0.0, 10.0], vec![4.0, 6.0]]).unwrap());
        assert_eq!((r.p_value, r.degenerate), (0.0, true));

        let r = levene_test(
            &GroupSamples::from_values(vec![vec![1.0, 2.0, 3.0, 10.0], vec![4.0, 5.0, 5.0, 6.0]]).unwrap(),
        );
        assert!((r.statistic - 5.0).abs() < 1e-12);
        assert!((r.p_value - 0.06670680196204089).abs() < 1e-12);
    }

    #[test]
    fn group_validation() {
        assert!(GroupSamples::from_values(vec![vec![1.0, 2.0]]).is_err());
        assert!(GroupSamples::from_values(vec![vec![1.0, 2.0], vec![3.0]]).is_err());
        assert!(GroupSamples::from_values(vec![vec![1.0, f64::NAN], vec![3.0, 4.0]]).is_err());
        assert!(serde_json::from_str::<GroupSamples>(r#"{"groups":[{"name":"a","values":[1,2]}]}"#).is_err());
    }

    #[test]
    fn infinite_statistic_survives_json() {
        let r = one_way_anova(&GroupSamples::from_values(vec![vec![2.0; 3], vec![5.0; 4]]).unwrap());
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains(r#""statistic":null"#));
        assert_eq!(serde_json::from_str::<TestResult>(&json).unwrap(), r);
    }
}
