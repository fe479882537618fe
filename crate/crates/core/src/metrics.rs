//! Regression metrics, residual normality, hexagonal binning and feature
//! correlation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataio::{FeatureGroup, FeatureTable, WeatherVar};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricFlags {
    /// `SSE > SST`, so `paper_r` was clamped to zero.
    pub paper_r_clamped: bool,
    /// One side is constant and Pearson r is reported as 0.
    pub pearson_undefined: bool,
    pub constant_truth: bool,
    pub constant_pred: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
    /// `√max(0, 1 − SSE/SST)`.
    pub paper_r: f64,
    pub pearson_r: f64,
    pub r_squared: f64,
    pub flags: MetricFlags,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    crate::error::check_dim(a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::invalid("metrics need at least one value"));
    }
    Ok(())
}

/// Pearson correlation; `None` when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

pub fn evaluate(pred: &[f64], truth: &[f64]) -> Result<MetricSet> {
    check_pair(pred, truth)?;
    let n = truth.len();
    let nf = n as f64;
    let mt = mean(truth);
    let mae = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / nf;
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (t - p).powi(2)).sum();
    let sst: f64 = truth.iter().map(|t| (t - mt).powi(2)).sum();
    let rmse = (sse / nf).sqrt();
    let constant_truth = truth.iter().all(|t| *t == truth[0]);
    let constant_pred = pred.iter().all(|p| *p == pred[0]);
    let (paper_r, r_squared, clamped) = if sst > 0.0 {
        let r2 = 1.0 - sse / sst;
        (r2.max(0.0).sqrt(), r2, sse > sst)
    } else {
        (0.0, 0.0, false)
    };
    let pr = pearson(pred, truth);
    Ok(MetricSet {
        n,
        mae,
        rmse,
        paper_r,
        pearson_r: pr.unwrap_or(0.0),
        r_squared,
        flags: MetricFlags {
            paper_r_clamped: clamped,
            pearson_undefined: pr.is_none(),
            constant_truth,
            constant_pred,
        },
    })
}

/// `|A − P| / A × 100` per instance; `None` where `A == 0`.
pub fn percentage_error(actual: &[f64], predicted: &[f64]) -> Result<Vec<Option<f64>>> {
    check_pair(actual, predicted)?;
    Ok(actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (*a != 0.0).then(|| (a - p).abs() / a * 100.0))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionError {
    pub region_id: String,
    pub n: usize,
    pub mean_pct_error: f64,
    pub max_pct_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionalSummary {
    pub regions: Vec<RegionError>,
    /// Row indices skipped because the actual yield was zero.
    pub excluded: Vec<usize>,
}

pub fn regional_percentage_error(
    region_id: &[String],
    actual: &[f64],
    predicted: &[f64],
) -> Result<RegionalSummary> {
    crate::error::check_dim(actual.len(), region_id.len())?;
    let pct = percentage_error(actual, predicted)?;
    let mut acc: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut excluded = Vec::new();
    for (i, p) in pct.iter().enumerate() {
        match p {
            Some(v) => acc.entry(region_id[i].as_str()).or_default().push(*v),
            None => excluded.push(i),
        }
    }
    let regions = acc
        .into_iter()
        .map(|(r, v)| RegionError {
            region_id: r.to_string(),
            n: v.len(),
            mean_pct_error: mean(&v),
            max_pct_error: v.iter().copied().fold(0.0, f64::max),
        })
        .collect();
    Ok(RegionalSummary { regions, excluded })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PBand {
    #[serde(rename = "p<0.01")]
    Below1,
    #[serde(rename = "0.01<=p<0.05")]
    Below5,
    #[serde(rename = "0.05<=p<0.10")]
    Below10,
    #[serde(rename = "p>=0.10")]
    AtLeast10,
}

impl PBand {
    fn of(p: f64) -> Self {
        if p < 0.01 {
            PBand::Below1
        } else if p < 0.05 {
            PBand::Below5
        } else if p < 0.10 {
            PBand::Below10
        } else {
            PBand::AtLeast10
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityTest {
    pub n: usize,
    /// Uncorrected A².
    pub statistic: f64,
    /// `A²(1 + 0.75/n + 2.25/n²)`.
    pub adjusted: f64,
    pub p_value: f64,
    pub band: PBand,
}

/// Anderson–Darling test for normality with mean and variance estimated
/// from the sample.
pub fn anderson_darling_normality(residuals: &[f64]) -> Result<NormalityTest> {
    let n = residuals.len();
    if n < 8 {
        return Err(Error::invalid(format!(
            "Anderson-Darling needs at least 8 values, got {n}"
        )));
    }
    let nf = n as f64;
    let m = mean(residuals);
    let var = residuals.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (nf - 1.0);
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::invalid(
            "Anderson-Darling needs residuals with nonzero variance",
        ));
    }
    let sd = var.sqrt();
    let mut z: Vec<f64> = residuals.iter().map(|r| (r - m) / sd).collect();
    z.sort_by(f64::total_cmp);
    let norm = Normal::standard();
    let mut s = 0.0;
    for i in 0..n {
        let lo = norm.cdf(z[i]).ln();
        let hi = norm.cdf(-z[n - 1 - i]).ln();
        s += (2 * i + 1) as f64 * (lo + hi);
    }
    let a2 = -nf - s / nf;
    let a = a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf));
    let p = if a >= 0.6 {
        (1.2937 - 5.709 * a + 0.0186 * a * a).exp()
    } else if a >= 0.34 {
        (0.9177 - 4.279 * a - 1.38 * a * a).exp()
    } else if a >= 0.2 {
        1.0 - (-8.318 + 42.796 * a - 59.938 * a * a).exp()
    } else {
        1.0 - (-13.436 + 101.14 * a - 223.73 * a * a).exp()
    }
    .clamp(0.0, 1.0);
    Ok(NormalityTest {
        n,
        statistic: a2,
        adjusted: a,
        p_value: p,
        band: PBand::of(p),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HexBin {
    pub q: i64,
    pub r: i64,
    /// Center in data coordinates (truth on x, prediction on y).
    pub x: f64,
    pub y: f64,
    pub count: usize,
}

/// Axial coordinates of the pointy-top hexagon containing `(x, y)`.
pub fn hex_axial(x: f64, y: f64, size: f64) -> (i64, i64) {
    let qf = (3f64.sqrt() / 3.0 * x - y / 3.0) / size;
    let rf = (2.0 / 3.0 * y) / size;
    let sf = -qf - rf;
    let (mut q, mut r, s) = (qf.round(), rf.round(), sf.round());
    let (dq, dr, ds) = ((q - qf).abs(), (r - rf).abs(), (s - sf).abs());
    if dq > dr && dq > ds {
        q = -r - s;
    } else if dr > ds {
        r = -q - s;
    }
    (q as i64, r as i64)
}

pub fn hex_center(q: i64, r: i64, size: f64) -> (f64, f64) {
    let (q, r) = (q as f64, r as f64);
    (size * 3f64.sqrt() * (q + r / 2.0), size * 1.5 * r)
}

/// Bins `(truth, pred)` pairs; output sorted by `(q, r)`.
pub fn hexbin(pred: &[f64], truth: &[f64], hex_size: f64) -> Result<Vec<HexBin>> {
    crate::error::check_dim(truth.len(), pred.len())?;
    if !(hex_size > 0.0) || !hex_size.is_finite() {
        return Err(Error::invalid("hex_size must be positive"));
    }
    let mut counts: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    for (t, p) in truth.iter().zip(pred) {
        *counts.entry(hex_axial(*t, *p, hex_size)).or_default() += 1;
    }
    Ok(counts
        .into_iter()
        .map(|((q, r), count)| {
            let (x, y) = hex_center(q, r, hex_size);
            HexBin { q, r, x, y, count }
        })
        .collect())
}

/// `range(truth) / 20`, or 1 for a constant truth.
pub fn default_hex_size(truth: &[f64]) -> f64 {
    let lo = truth.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = truth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s = (hi - lo) / 20.0;
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub values: Matrix,
    /// Constant columns; their off-diagonal entries are 0.
    pub constant: Vec<bool>,
}

/// Pearson matrix over the table's features followed by the target
/// (`yield`). With `average_weeks`, each weather variable is first reduced
/// to its mean across weeks.
pub fn correlation_matrix(table: &FeatureTable, average_weeks: bool) -> Result<CorrelationMatrix> {
    if table.n_rows() < 2 {
        return Err(Error::invalid("correlation needs at least two rows"));
    }
    let mut names = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut weekly: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (j, d) in table.descriptors.iter().enumerate() {
        match (average_weeks, d.group, d.weather_var) {
            (true, FeatureGroup::Weather, Some(v)) => weekly.entry(v.index()).or_default().push(j),
            _ => {
                names.push(d.name.clone());
                cols.push(table.features.column(j));
            }
        }
    }
    for (v, idx) in weekly {
        names.push(WeatherVar::ALL[v].as_str().to_string());
        cols.push(
            table
                .features
                .iter_rows()
                .map(|r| idx.iter().map(|&j| r[j]).sum::<f64>() / idx.len() as f64)
                .collect(),
        );
    }
    names.push("yield".into());
    cols.push(table.target.clone());

    let d = cols.len();
    let constant: Vec<bool> = cols.iter().map(|c| c.iter().all(|v| *v == c[0])).collect();
    let mut values = Matrix::zeros(d, d);
    for a in 0..d {
        values.set(a, a, 1.0);
        for b in a + 1..d {
            let r = pearson(&cols[a], &cols[b]).unwrap_or(0.0);
            values.set(a, b, r);
            values.set(b, a, r);
        }
    }
    Ok(CorrelationMatrix {
        names,
        values,
        constant,
    })
}

/// One model's result on one held-out year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub train_years: Vec<i32>,
    pub test_year: i32,
    pub train_metrics: MetricSet,
    pub metrics: MetricSet,
    pub residual_test: Option<NormalityTest>,
    pub hexbin: Vec<HexBin>,
    pub per_region_error: Vec<RegionError>,
}
