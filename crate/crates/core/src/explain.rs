//! Shapley attributions: Kernel SHAP, exact enumeration, global ranking,
//! force-plot data and ranking-based feature selection.

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{FeatureDescriptor, FeatureGroup};
use crate::error::{Error, Result};
use crate::matrix::{solve_lu, Matrix};
use crate::metrics::pearson;
use crate::rng::{derive_seed, rng};

/// Batch prediction over the rows of a matrix.
pub trait Predictor: Sync {
    fn predict_matrix(&self, x: &Matrix) -> Vec<f64>;
}

impl<F: Fn(&Matrix) -> Vec<f64> + Sync> Predictor for F {
    fn predict_matrix(&self, x: &Matrix) -> Vec<f64> {
        self(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub phi: Vec<f64>,
    pub base_value: f64,
    pub prediction: f64,
    /// Row index of the explained instance, when known.
    pub instance: Option<usize>,
    /// Coalitions evaluated, including the empty and full ones.
    pub budget_used: usize,
    pub exact: bool,
}

impl Attribution {
    pub fn efficiency_gap(&self) -> f64 {
        (self.base_value + self.phi.iter().sum::<f64>() - self.prediction).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelShapOptions {
    pub budget: usize,
    pub seed: u64,
    /// L2 penalty on the kernel regression; 0 disables it.
    pub regularizer: f64,
}

/// Coalitions per batched model call.
const CHUNK: usize = 256;

/// `v(S)` for each mask: mean over background rows of the model with the
/// features in `S` taken from `x`.
fn coalition_values(
    model: &dyn Predictor,
    x: &[f64],
    background: &Matrix,
    masks: &[Vec<bool>],
) -> Vec<f64> {
    let b = background.rows();
    let d = x.len();
    let mut out = Vec::with_capacity(masks.len());
    for chunk in masks.chunks(CHUNK) {
        let mut data = Vec::with_capacity(chunk.len() * b * d);
        for m in chunk {
            for row in background.iter_rows() {
                data.extend((0..d).map(|j| if m[j] { x[j] } else { row[j] }));
            }
        }
        let batch = Matrix::from_vec(chunk.len() * b, d, data).expect("sizes agree");
        let preds = model.predict_matrix(&batch);
        out.extend(preds.chunks(b).map(|c| c.iter().sum::<f64>() / b as f64));
    }
    out
}

fn check_inputs(x: &[f64], background: &Matrix) -> Result<()> {
    if background.rows() == 0 {
        return Err(Error::invalid("background set is empty"));
    }
    crate::error::check_dim(x.len(), background.cols())?;
    if x.is_empty() {
        return Err(Error::invalid(
            "cannot attribute an instance with no features",
        ));
    }
    Ok(())
}

fn ln_binom(n: usize, k: usize) -> f64 {
    ln_fact(n) - ln_fact(k) - ln_fact(n - k)
}

fn ln_fact(n: usize) -> f64 {
    (1..=n).map(|i| (i as f64).ln()).sum()
}

/// Shapley kernel weight of a coalition of size `s` among `d` features.
pub fn shapley_kernel_weight(d: usize, s: usize) -> f64 {
    if s == 0 || s == d {
        return f64::INFINITY;
    }
    (d as f64 - 1.0) / (ln_binom(d, s).exp() * s as f64 * (d - s) as f64)
}

pub fn kernel_shap(
    model: &dyn Predictor,
    x: &[f64],
    background: &Matrix,
    opts: &KernelShapOptions,
) -> Result<Attribution> {
    check_inputs(x, background)?;
    let d = x.len();
    if opts.budget < d + 2 {
        return Err(Error::invalid(format!(
            "coalition budget {} is below d + 2 = {}",
            opts.budget,
            d + 2
        )));
    }
    if !(opts.regularizer >= 0.0) {
        return Err(Error::invalid("regularizer must be non-negative"));
    }
    let ends = coalition_values(model, x, background, &[vec![false; d], vec![true; d]]);
    let (base, fx) = (ends[0], ends[1]);
    let delta = fx - base;
    if d == 1 {
        return Ok(Attribution {
            phi: vec![delta],
            base_value: base,
            prediction: fx,
            instance: None,
            budget_used: 2,
            exact: true,
        });
    }

    let full = d < usize::BITS as usize - 1 && (1usize << d) <= opts.budget;
    let (masks, weights): (Vec<Vec<bool>>, Vec<f64>) = if full {
        (1..(1usize << d) - 1)
            .map(|m| {
                let mask: Vec<bool> = (0..d).map(|j| m >> j & 1 == 1).collect();
                let s = m.count_ones() as usize;
                (mask, shapley_kernel_weight(d, s))
            })
            .unzip()
    } else {
        sample_pairs(d, (opts.budget - 2) / 2, opts.seed)
            .into_iter()
            .map(|m| (m, 1.0))
            .unzip()
    };
    let values = coalition_values(model, x, background, &masks);

    // eliminate the last feature via the efficiency constraint
    let k = d - 1;
    let mut ata = Matrix::zeros(k, k);
    let mut aty = vec![0.0; k];
    let mut a = vec![0.0; k];
    for ((m, &w), &v) in masks.iter().zip(&weights).zip(&values) {
        let zl = if m[k] { 1.0 } else { 0.0 };
        for j in 0..k {
            a[j] = (if m[j] { 1.0 } else { 0.0 }) - zl;
        }
        let y = v - base - zl * delta;
        for i in 0..k {
            if a[i] == 0.0 {
                continue;
            }
            aty[i] += w * a[i] * y;
            for j in 0..k {
                let cur = ata.get(i, j);
                ata.set(i, j, cur + w * a[i] * a[j]);
            }
        }
    }
    for i in 0..k {
        let cur = ata.get(i, i);
        ata.set(i, i, cur + opts.regularizer);
    }
    let head = match solve_lu(&ata, &aty) {
        Ok(v) => v,
        Err(_) => {
            let jitter = 1e-10
                * (0..k)
                    .map(|i| ata.get(i, i))
                    .fold(0.0, f64::max)
                    .max(1e-300);
            for i in 0..k {
                let cur = ata.get(i, i);
                ata.set(i, i, cur + jitter);
            }
            solve_lu(&ata, &aty)?
        }
    };
    let mut phi = head;
    phi.push(delta - phi.iter().sum::<f64>());
    Ok(Attribution {
        phi,
        base_value: base,
        prediction: fx,
        instance: None,
        budget_used: masks.len() + 2,
        exact: full,
    })
}

/// `pairs` complementary coalition pairs, sizes drawn in proportion to the
/// total kernel weight of each size.
fn sample_pairs(d: usize, pairs: usize, seed: u64) -> Vec<Vec<bool>> {
    let mut r = rng(seed);
    let cum: Vec<f64> = (1..d)
        .scan(0.0, |acc, s| {
            *acc += 1.0 / (s as f64 * (d - s) as f64);
            Some(*acc)
        })
        .collect();
    let total = *cum.last().expect("d >= 2");
    let mut out = Vec::with_capacity(2 * pairs);
    for _ in 0..pairs {
        let u = r.random::<f64>() * total;
        let s = 1 + cum.iter().position(|c| u < *c).unwrap_or(d - 2);
        let mut m = vec![false; d];
        for j in sample(&mut r, d, s) {
            m[j] = true;
        }
        let comp: Vec<bool> = m.iter().map(|v| !v).collect();
        out.push(m);
        out.push(comp);
    }
    out
}

pub const EXACT_MAX_FEATURES: usize = 13;

pub fn exact_shapley(model: &dyn Predictor, x: &[f64], background: &Matrix) -> Result<Attribution> {
    check_inputs(x, background)?;
    let d = x.len();
    if d > EXACT_MAX_FEATURES {
        return Err(Error::invalid(format!(
            "exact enumeration is limited to {EXACT_MAX_FEATURES} features, got {d}"
        )));
    }
    let n = 1usize << d;
    let masks: Vec<Vec<bool>> = (0..n)
        .map(|m| (0..d).map(|j| m >> j & 1 == 1).collect())
        .collect();
    let v = coalition_values(model, x, background, &masks);
    let w: Vec<f64> = (0..d)
        .map(|s| (ln_fact(s) + ln_fact(d - s - 1) - ln_fact(d)).exp())
        .collect();
    let mut phi = vec![0.0; d];
    for m in 0..n {
        let s = m.count_ones() as usize;
        for (j, p) in phi.iter_mut().enumerate() {
            if m >> j & 1 == 0 {
                *p += w[s] * (v[m | 1 << j] - v[m]);
            }
        }
    }
    Ok(Attribution {
        phi,
        base_value: v[0],
        prediction: v[n - 1],
        instance: None,
        budget_used: n,
        exact: true,
    })
}

/// Explains every row of `instances` in parallel. Kernel SHAP seeds are
/// derived per row from `opts.seed`; `opts == None` uses exact enumeration.
pub fn explain_rows(
    model: &dyn Predictor,
    instances: &Matrix,
    background: &Matrix,
    opts: Option<&KernelShapOptions>,
) -> Result<Vec<Attribution>> {
    (0..instances.rows())
        .into_par_iter()
        .map(|i| {
            let x = instances.row(i);
            let mut a = match opts {
                Some(o) => kernel_shap(
                    model,
                    x,
                    background,
                    &KernelShapOptions {
                        seed: derive_seed(o.seed, i as u64),
                        ..*o
                    },
                )?,
                None => exact_shapley(model, x, background)?,
            };
            a.instance = Some(i);
            Ok(a)
        })
        .collect()
}

/// `n` rows drawn uniformly without replacement (all rows if fewer).
pub fn sample_background(x: &Matrix, n: usize, seed: u64) -> Matrix {
    if n >= x.rows() {
        return x.clone();
    }
    let mut idx = sample(&mut rng(seed), x.rows(), n).into_vec();
    idx.sort_unstable();
    x.select_rows(&idx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImpactSign {
    Positive,
    Negative,
    /// Feature value or attribution is constant across instances.
    Undefined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub feature: String,
    pub index: usize,
    pub mean_abs_phi: f64,
    pub sign: ImpactSign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImportanceRanking {
    pub entries: Vec<ImportanceEntry>,
}

impl ImportanceRanking {
    pub fn top(&self, k: usize) -> ImportanceRanking {
        ImportanceRanking {
            entries: self.entries.iter().take(k).cloned().collect(),
        }
    }
}

/// Mean |φ| per feature, descending. `values` holds the explained
/// instances' feature values, one row per attribution.
pub fn global_importance(
    attributions: &[Attribution],
    values: &Matrix,
    names: &[String],
) -> Result<ImportanceRanking> {
    let first = attributions
        .first()
        .ok_or_else(|| Error::invalid("no attributions to rank"))?;
    let d = first.phi.len();
    crate::error::check_dim(d, names.len())?;
    crate::error::check_dim(d, values.cols())?;
    crate::error::check_dim(attributions.len(), values.rows())?;
    if attributions.iter().any(|a| a.phi.len() != d) {
        return Err(Error::invalid("attributions disagree on feature count"));
    }
    let n = attributions.len() as f64;
    let mut entries: Vec<ImportanceEntry> = (0..d)
        .map(|j| {
            let phis: Vec<f64> = attributions.iter().map(|a| a.phi[j]).collect();
            let sign = match pearson(&values.column(j), &phis) {
                Some(r) if r > 0.0 => ImpactSign::Positive,
                Some(r) if r < 0.0 => ImpactSign::Negative,
                _ => ImpactSign::Undefined,
            };
            ImportanceEntry {
                feature: names[j].clone(),
                index: j,
                mean_abs_phi: phis.iter().map(|p| p.abs()).sum::<f64>() / n,
                sign,
            }
        })
        .collect();
    entries.sort_by(|a, b| {
        b.mean_abs_phi
            .total_cmp(&a.mean_abs_phi)
            .then(a.index.cmp(&b.index))
    });
    Ok(ImportanceRanking { entries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub feature: String,
    pub value: f64,
    pub phi: f64,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcePlot {
    pub base_value: f64,
    pub output: f64,
    pub contributions: Vec<Contribution>,
}

pub fn force_plot_data(
    attribution: &Attribution,
    names: &[String],
    values: &[f64],
) -> Result<ForcePlot> {
    let d = attribution.phi.len();
    crate::error::check_dim(d, names.len())?;
    crate::error::check_dim(d, values.len())?;
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| {
        attribution.phi[b]
            .abs()
            .total_cmp(&attribution.phi[a].abs())
            .then(a.cmp(&b))
    });
    Ok(ForcePlot {
        base_value: attribution.base_value,
        output: attribution.base_value + attribution.phi.iter().sum::<f64>(),
        contributions: idx
            .into_iter()
            .map(|j| Contribution {
                feature: names[j].clone(),
                value: values[j],
                phi: attribution.phi[j],
                positive: attribution.phi[j] >= 0.0,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    TopFraction(f64),
    Group(FeatureGroup),
}

/// Column indices kept by `rule`, in ascending order.
pub fn select_features(
    ranking: &ImportanceRanking,
    descriptors: &[FeatureDescriptor],
    rule: SelectionRule,
) -> Result<Vec<usize>> {
    let mut keep: Vec<usize> = match rule {
        SelectionRule::TopFraction(p) => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::invalid(format!(
                    "selection fraction {p} must lie in (0, 1]"
                )));
            }
            let k = (p * ranking.entries.len() as f64 - 1e-9).ceil() as usize;
            ranking
                .entries
                .iter()
                .take(k.max(1))
                .map(|e| e.index)
                .collect()
        }
        SelectionRule::Group(g) => descriptors
            .iter()
            .enumerate()
            .filter(|(_, d)| d.group == g)
            .map(|(j, _)| j)
            .collect(),
    };
    keep.sort_unstable();
    Ok(keep)
}
