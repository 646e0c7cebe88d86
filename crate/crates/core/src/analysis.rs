//! Noise statistics over latency traces.
//!
//! Conventions: the median of an even-sized sample is the mean of the two
//! central order statistics; quantiles are nearest-rank, `Q(p)` being the
//! `ceil(p * n)`-th smallest value (at least the first). Quantile levels are
//! resolved to parts per million.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::ScenarioLabel;
use crate::tenant::{TenantReport, WorkloadKind};

pub const DEFAULT_LOW_QUANTILE: f64 = 0.0005;
pub const DEFAULT_HIGH_QUANTILE: f64 = 0.9995;
pub const DEFAULT_WINDOW: usize = 1000;
pub const MEDIAN_CONVENTION: &str = "mean of central pair for even n";
pub const QUANTILE_CONVENTION: &str = "nearest-rank, ceil(p*n)";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("empty trace")]
    Empty,
    #[error("trace contains a non-positive latency at index {0}")]
    NonPositive(usize),
    #[error("window {window} exceeds trace length {n}")]
    Window { window: usize, n: usize },
    #[error("invalid quantile bounds low={low} high={high}")]
    Quantiles { low: f64, high: f64 },
    #[error("need at least two summaries, got {0}")]
    TooFew(usize),
    #[error("workload sets differ: {0}")]
    KindMismatch(String),
    #[error("no `{0}` baseline report")]
    MissingBaseline(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadSummary {
    pub n: usize,
    pub min: u64,
    pub max: u64,
    pub median: f64,
    /// max / median
    pub max_spread: f64,
    /// median / min
    pub min_spread: f64,
    pub q_low: u64,
    pub q_high: u64,
    /// Exact rational forms of the two spreads.
    pub max_spread_exact: Ratio<u128>,
    pub min_spread_exact: Ratio<u128>,
    pub median_convention: String,
    pub quantile_convention: String,
}

fn check(deltas: &[u64]) -> Result<(), AnalysisError> {
    if deltas.is_empty() {
        return Err(AnalysisError::Empty);
    }
    if let Some(i) = deltas.iter().position(|&d| d == 0) {
        return Err(AnalysisError::NonPositive(i));
    }
    Ok(())
}

fn ppm(p: f64) -> u128 {
    (p * 1e6).round() as u128
}

/// 1-based nearest rank for level `p` in a sample of `n`.
fn nearest_rank(p: f64, n: usize) -> usize {
    let n128 = n as u128;
    let rank = (ppm(p) * n128).div_ceil(1_000_000);
    rank.clamp(1, n128) as usize
}

/// Value of nearest-rank quantile `p`; reorders `scratch`.
fn quantile(scratch: &mut [u64], p: f64) -> u64 {
    let k = nearest_rank(p, scratch.len()) - 1;
    *scratch.select_nth_unstable(k).1
}

fn exact_median(scratch: &mut [u64]) -> Ratio<u128> {
    let n = scratch.len();
    let hi = *scratch.select_nth_unstable(n / 2).1 as u128;
    if n % 2 == 1 {
        Ratio::from_integer(hi)
    } else {
        // after selection everything left of n/2 is <= hi; its max is the lower middle
        let lo = *scratch[..n / 2].iter().max().expect("n >= 2") as u128;
        Ratio::new(lo + hi, 2)
    }
}

fn to_f64(r: Ratio<u128>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

pub fn spreads(deltas: &[u64]) -> Result<SpreadSummary, AnalysisError> {
    check(deltas)?;
    let mut scratch = deltas.to_vec();
    let min = *scratch.iter().min().expect("non-empty");
    let max = *scratch.iter().max().expect("non-empty");
    let median = exact_median(&mut scratch);
    let q_low = quantile(&mut scratch, DEFAULT_LOW_QUANTILE);
    let q_high = quantile(&mut scratch, DEFAULT_HIGH_QUANTILE);
    let max_spread = Ratio::from_integer(max as u128) / median;
    let min_spread = median / Ratio::from_integer(min as u128);
    Ok(SpreadSummary {
        n: deltas.len(),
        min,
        max,
        median: to_f64(median),
        max_spread: to_f64(max_spread),
        min_spread: to_f64(min_spread),
        q_low,
        q_high,
        max_spread_exact: max_spread,
        min_spread_exact: min_spread,
        median_convention: MEDIAN_CONVENTION.into(),
        quantile_convention: QUANTILE_CONVENTION.into(),
    })
}

/// Means of every full window: `out[i] = mean(deltas[i..i + window])`.
pub fn sliding_mean(deltas: &[u64], window: usize) -> Result<Vec<f64>, AnalysisError> {
    if window == 0 || window > deltas.len() {
        return Err(AnalysisError::Window { window, n: deltas.len() });
    }
    let mut out = Vec::with_capacity(deltas.len() - window + 1);
    let mut sum: u128 = deltas[..window].iter().map(|&d| d as u128).sum();
    out.push(sum as f64 / window as f64);
    for i in window..deltas.len() {
        sum = sum + deltas[i] as u128 - deltas[i - window] as u128;
        out.push(sum as f64 / window as f64);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointClass {
    Normal,
    LowExtreme,
    HighExtreme,
}

impl PointClass {
    pub fn as_str(self) -> &'static str {
        match self {
            PointClass::Normal => "normal",
            PointClass::LowExtreme => "low",
            PointClass::HighExtreme => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierClassification {
    pub classes: Vec<PointClass>,
    pub q_low: u64,
    pub q_high: u64,
    pub normal: usize,
    pub low: usize,
    pub high: usize,
}

impl OutlierClassification {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// Marks points strictly below `Q(low)` or strictly above `Q(high)`.
pub fn classify_outliers(deltas: &[u64], low: f64, high: f64) -> Result<OutlierClassification, AnalysisError> {
    if !(0.0..=1.0).contains(&low) || !(0.0..=1.0).contains(&high) || low >= high {
        return Err(AnalysisError::Quantiles { low, high });
    }
    if deltas.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut scratch = deltas.to_vec();
    let q_low = quantile(&mut scratch, low);
    let q_high = quantile(&mut scratch, high);
    let classes: Vec<PointClass> = deltas
        .iter()
        .map(|&d| {
            if d < q_low {
                PointClass::LowExtreme
            } else if d > q_high {
                PointClass::HighExtreme
            } else {
                PointClass::Normal
            }
        })
        .collect();
    let count = |c| classes.iter().filter(|&&x| x == c).count();
    Ok(OutlierClassification {
        q_low,
        q_high,
        normal: count(PointClass::Normal),
        low: count(PointClass::LowExtreme),
        high: count(PointClass::HighExtreme),
        classes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub center: f64,
    pub count: usize,
    /// Fraction of all observations in the peak bin.
    pub mass: f64,
}

pub const BAND_MIN_MASS: f64 = 0.01;

/// Histogram peaks holding more than 1% of all observations, by ascending center.
///
/// A bin is a peak when it is strictly above its left neighbour and not below
/// its right one, so a plateau reports its first bin once.
pub fn detect_bands(deltas: &[u64], bin_width: u64) -> Vec<Band> {
    if bin_width == 0 || deltas.is_empty() {
        return Vec::new();
    }
    let mut hist: BTreeMap<u64, usize> = BTreeMap::new();
    for &d in deltas {
        *hist.entry(d / bin_width).or_insert(0) += 1;
    }
    let total = deltas.len() as f64;
    let at = |b: Option<u64>| b.and_then(|b| hist.get(&b).copied()).unwrap_or(0);
    hist.iter()
        .filter(|&(&bin, &count)| count > at(bin.checked_sub(1)) && count >= at(bin.checked_add(1)))
        .filter(|&(_, &count)| count as f64 / total > BAND_MIN_MASS)
        .map(|(&bin, &count)| Band {
            center: (bin as f64 + 0.5) * bin_width as f64,
            count,
            mass: count as f64 / total,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub max_spread: f64,
    pub min_spread: f64,
    /// baseline max_spread / this max_spread
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_spread_reduction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_spread_reduction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub baseline: Option<String>,
    /// Ordered by ascending max_spread.
    pub rows: Vec<ComparisonRow>,
}

pub fn compare_scenarios(summaries: &BTreeMap<String, SpreadSummary>) -> Result<ComparisonTable, AnalysisError> {
    if summaries.len() < 2 {
        return Err(AnalysisError::TooFew(summaries.len()));
    }
    let baseline_label = ScenarioLabel::Load.as_str();
    let baseline = summaries.get(baseline_label);
    let mut rows: Vec<ComparisonRow> = summaries
        .iter()
        .map(|(label, s)| ComparisonRow {
            label: label.clone(),
            max_spread: s.max_spread,
            min_spread: s.min_spread,
            max_spread_reduction: baseline.map(|b| b.max_spread / s.max_spread),
            min_spread_reduction: baseline.map(|b| b.min_spread / s.min_spread),
        })
        .collect();
    rows.sort_by(|a, b| a.max_spread.total_cmp(&b.max_spread).then_with(|| a.label.cmp(&b.label)));
    Ok(ComparisonTable { baseline: baseline.map(|_| baseline_label.to_string()), rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactRow {
    pub label: String,
    pub workload: WorkloadKind,
    pub baseline_ops_per_sec: f64,
    pub ops_per_sec: f64,
    /// (ops_per_sec - baseline) / baseline; `None` if either side has no healthy cell.
    pub relative_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactTable {
    pub baseline: String,
    pub rows: Vec<ImpactRow>,
}

/// Per-workload tenant throughput change relative to the `load` scenario.
pub fn tenant_impact(reports: &BTreeMap<String, TenantReport>) -> Result<ImpactTable, AnalysisError> {
    let baseline_label = ScenarioLabel::Load.as_str();
    let base = reports
        .get(baseline_label)
        .ok_or_else(|| AnalysisError::MissingBaseline(baseline_label.into()))?;
    let kinds: BTreeSet<WorkloadKind> = base.workloads().into_iter().collect();
    let mut rows = Vec::new();
    for (label, report) in reports {
        let theirs: BTreeSet<WorkloadKind> = report.workloads().into_iter().collect();
        if theirs != kinds {
            return Err(AnalysisError::KindMismatch(format!("{label} has {theirs:?}, {baseline_label} has {kinds:?}")));
        }
        for &k in &kinds {
            let b = base.throughput(k);
            let o = report.throughput(k);
            rows.push(ImpactRow {
                label: label.clone(),
                workload: k,
                baseline_ops_per_sec: b.unwrap_or(0.0),
                ops_per_sec: o.unwrap_or(0.0),
                relative_delta: match (b, o) {
                    (Some(b), Some(o)) if b > 0.0 => Some((o - b) / b),
                    _ => None,
                },
            });
        }
    }
    Ok(ImpactTable { baseline: baseline_label.into(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tenant::{CellStatus, TenantCell};

    #[test]
    fn constant_trace() {
        let s = spreads(&[10, 10, 10]).unwrap();
        assert_eq!((s.median, s.max_spread, s.min_spread), (10.0, 1.0, 1.0));
    }

    #[test]
    fn skewed_trace() {
        let s = spreads(&[1, 2, 3, 4, 100]).unwrap();
        assert_eq!(s.median, 3.0);
        assert_eq!(s.max_spread_exact, Ratio::new(100, 3));
        assert_eq!(s.min_spread_exact, Ratio::from_integer(3));
        assert_eq!(s.max_spread, 100.0 / 3.0);
    }

    #[test]
    fn even_median_is_central_mean() {
        let s = spreads(&[4, 1, 3, 2]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.min_spread_exact, Ratio::new(5, 2));
    }

    #[test]
    fn spread_errors() {
        assert_eq!(spreads(&[]), Err(AnalysisError::Empty));
        assert_eq!(spreads(&[3, 0]), Err(AnalysisError::NonPositive(1)));
    }

    #[test]
    fn nearest_rank_levels() {
        assert_eq!(nearest_rank(0.0005, 10_000), 5);
        assert_eq!(nearest_rank(0.9995, 10_000), 9995);
        assert_eq!(nearest_rank(0.0005, 10), 1);
        assert_eq!(nearest_rank(0.0, 10), 1);
        assert_eq!(nearest_rank(1.0, 10), 10);
    }

    #[test]
    fn sliding_means() {
        assert_eq!(sliding_mean(&[1, 2, 3, 4], 2).unwrap(), vec![1.5, 2.5, 3.5]);
        assert_eq!(sliding_mean(&[5; 10], 3).unwrap(), vec![5.0; 8]);
        assert_eq!(sliding_mean(&[1, 2, 3, 6], 4).unwrap(), vec![3.0]);
        assert!(sliding_mean(&[1, 2], 3).is_err());
    }

    #[test]
    fn classify_identical_and_spike() {
        let c = classify_outliers(&[7; 100], 0.0005, 0.9995).unwrap();
        assert_eq!((c.low, c.high, c.normal), (0, 0, 100));

        let mut d = vec![50u64; 10_000];
        d[1234] = 5000;
        let c = classify_outliers(&d, 0.0005, 0.9995).unwrap();
        assert_eq!(c.classes[1234], PointClass::HighExtreme);
        assert_eq!(c.high, 1);
    }

    #[test]
    fn classify_rejects_bad_levels() {
        assert!(classify_outliers(&[1], 0.5, 0.5).is_err());
        assert!(classify_outliers(&[1], -0.1, 0.5).is_err());
        assert_eq!(classify_outliers(&[], 0.1, 0.9), Err(AnalysisError::Empty));
    }

    #[test]
    fn bands() {
        let mut d = vec![100u64; 500];
        d.extend(vec![300u64; 500]);
        let b = detect_bands(&d, 10);
        assert_eq!(b.len(), 2);
        assert!(b[0].center < b[1].center);
        assert_eq!(detect_bands(&[42; 10], 5).len(), 1);
        // a tiny isolated cluster is below the mass floor
        let mut d = vec![100u64; 1000];
        d.extend([900, 900, 900, 900, 900]);
        assert_eq!(detect_bands(&d, 10).len(), 1);
    }

    fn summary(max: u64) -> SpreadSummary {
        spreads(&[10, 10, max]).unwrap()
    }

    #[test]
    fn comparison_ratios() {
        let mut m = BTreeMap::new();
        m.insert("load".to_string(), summary(10_000));
        m.insert("load-shield".to_string(), summary(10));
        let t = compare_scenarios(&m).unwrap();
        assert_eq!(t.rows[0].label, "load-shield");
        assert_eq!(t.rows[0].max_spread_reduction, Some(1000.0));
        assert_eq!(t.rows[1].max_spread_reduction, Some(1.0));

        m.remove("load");
        m.insert("no-load".to_string(), summary(10));
        let t = compare_scenarios(&m).unwrap();
        assert!(t.baseline.is_none() && t.rows.iter().all(|r| r.max_spread_reduction.is_none()));

        m.remove("no-load");
        assert_eq!(compare_scenarios(&m), Err(AnalysisError::TooFew(1)));
    }

    fn report(ops: u64, kinds: &[WorkloadKind]) -> TenantReport {
        TenantReport {
            seed: 1,
            elapsed_ns: 1_000_000_000,
            worker_policy: "other".into(),
            parameters: serde_json::Value::Null,
            cells: kinds
                .iter()
                .map(|&k| TenantCell::new(k, 1, ops, 1_000_000_000, CellStatus::Ok))
                .collect(),
        }
    }

    #[test]
    fn impact_deltas() {
        let mut m = BTreeMap::new();
        m.insert("load".to_string(), report(100, &[WorkloadKind::Bsearch]));
        m.insert("load-shield-fifo".to_string(), report(200, &[WorkloadKind::Bsearch]));
        let t = tenant_impact(&m).unwrap();
        let row = t.rows.iter().find(|r| r.label == "load-shield-fifo").unwrap();
        assert_eq!(row.relative_delta, Some(1.0));
        let base = t.rows.iter().find(|r| r.label == "load").unwrap();
        assert_eq!(base.relative_delta, Some(0.0));

        m.insert("load-fifo".to_string(), report(100, &[WorkloadKind::Matmul]));
        assert!(matches!(tenant_impact(&m), Err(AnalysisError::KindMismatch(_))));
        m.clear();
        m.insert("no-load".to_string(), report(1, &[WorkloadKind::Bsearch]));
        assert!(matches!(tenant_impact(&m), Err(AnalysisError::MissingBaseline(_))));
    }
}
