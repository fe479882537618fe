//! K-fold cross-validation and grid/random hyperparameter search.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataio::FeatureTable;
use crate::error::{Error, Result};
use crate::model::{fit_model, ModelSpec};
use crate::rng::{derive_seed, rng};

/// Fold id (`0..k`) for each of `n` rows. Fold sizes differ by at most one.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::invalid("cross-validation needs at least 2 folds"));
    }
    if n < k {
        return Err(Error::invalid(format!(
            "cannot split {n} rows into {k} folds"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng(seed));
    let mut folds = vec![0; n];
    for (pos, &row) in perm.iter().enumerate() {
        folds[row] = pos % k;
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Grid(Vec<Value>),
    Uniform([f64; 2]),
    LogUniform([f64; 2]),
    IntUniform([i64; 2]),
}

impl Domain {
    fn validate(&self, name: &str) -> Result<()> {
        let bad = |why: &str| Err(Error::invalid(format!("search domain `{name}`: {why}")));
        match self {
            Domain::Grid(v) if v.is_empty() => bad("grid is empty"),
            Domain::Uniform([a, b]) if !(a.is_finite() && b.is_finite() && a <= b) => {
                bad("bounds must be finite and ordered")
            }
            Domain::LogUniform([a, b])
                if !(a.is_finite() && b.is_finite() && *a > 0.0 && a <= b) =>
            {
                bad("log-uniform bounds must be positive, finite and ordered")
            }
            Domain::IntUniform([a, b]) if a > b => bad("bounds must be ordered"),
            _ => Ok(()),
        }
    }

    fn sample(&self, r: &mut crate::rng::Rng) -> Value {
        match self {
            Domain::Grid(v) => v[r.random_range(0..v.len())].clone(),
            Domain::Uniform([a, b]) => {
                Value::from(if a == b { *a } else { r.random_range(*a..*b) })
            }
            Domain::LogUniform([a, b]) => Value::from(if a == b {
                *a
            } else {
                r.random_range(a.ln()..b.ln()).exp()
            }),
            Domain::IntUniform([a, b]) => Value::from(r.random_range(*a..=*b)),
        }
    }
}

/// Hyperparameter path (see [`ModelSpec::with_overrides`]) to domain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SearchSpace(pub BTreeMap<String, Domain>);

impl SearchSpace {
    pub fn is_grid(&self) -> bool {
        self.0.values().all(|d| matches!(d, Domain::Grid(_)))
    }

    /// Cartesian product of grid values, last key varying fastest.
    pub fn grid(&self) -> Vec<BTreeMap<String, Value>> {
        let mut out = vec![BTreeMap::new()];
        for (name, dom) in &self.0 {
            let Domain::Grid(values) = dom else { continue };
            out = out
                .into_iter()
                .flat_map(|base| {
                    values.iter().map(move |v| {
                        let mut c = base.clone();
                        c.insert(name.clone(), v.clone());
                        c
                    })
                })
                .collect();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Random-mode trial count; grid spaces run their full product.
    pub budget: usize,
    pub folds: usize,
    pub seed: u64,
    /// Rows from this year on must not reach the search.
    pub holdout_year: Option<i32>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            budget: 50,
            folds: 3,
            seed: 0,
            holdout_year: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub params: BTreeMap<String, Value>,
    pub fold_rmse: Vec<f64>,
    /// `None` when the configuration failed to train.
    pub mean_rmse: Option<f64>,
    pub error: Option<String>,
    pub seed: u64,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_index: usize,
    pub best_spec: ModelSpec,
    pub trials: Vec<TrialRecord>,
}

impl SearchResult {
    pub fn best(&self) -> &TrialRecord {
        &self.trials[self.best_index]
    }
}

/// RMSE of `spec` on each fold, trained on the remaining folds.
pub fn cross_validate(
    spec: &ModelSpec,
    table: &FeatureTable,
    folds: &[usize],
    k: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    crate::error::check_dim(table.n_rows(), folds.len())?;
    (0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..folds.len()).partition(|&i| folds[i] == f);
            let model = fit_model(spec, &table.select_rows(&train), seed)?;
            let pred = model.predict_table(&table.select_rows(&test))?;
            let sse: f64 = test
                .iter()
                .zip(&pred)
                .map(|(&i, p)| (table.target[i] - p).powi(2))
                .sum();
            Ok((sse / test.len() as f64).sqrt())
        })
        .collect()
}

/// Trials run in parallel; trial `i` trains with `derive_seed(seed, i)`,
/// so the log does not depend on scheduling (apart from wall times).
pub fn search(
    base: &ModelSpec,
    space: &SearchSpace,
    opts: &SearchOptions,
    table: &FeatureTable,
) -> Result<SearchResult> {
    if space.0.is_empty() {
        return Err(Error::invalid("search space is empty"));
    }
    if opts.budget == 0 {
        return Err(Error::invalid("search budget must be at least 1"));
    }
    for (name, d) in &space.0 {
        d.validate(name)?;
    }
    if let Some(h) = opts.holdout_year {
        if let Some(y) = table.year.iter().find(|&&y| y >= h) {
            return Err(Error::invalid(format!(
                "row from year {y} would leak into a search held out from {h}"
            )));
        }
    }
    let configs: Vec<BTreeMap<String, Value>> = if space.is_grid() {
        space.grid()
    } else {
        (0..opts.budget)
            .map(|i| {
                let mut r = rng(derive_seed(derive_seed(opts.seed, u64::MAX), i as u64));
                space
                    .0
                    .iter()
                    .map(|(k, d)| (k.clone(), d.sample(&mut r)))
                    .collect()
            })
            .collect()
    };
    let specs = configs
        .iter()
        .map(|c| base.with_overrides(c))
        .collect::<Result<Vec<_>>>()?;
    let folds = make_folds(table.n_rows(), opts.folds, opts.seed)?;

    let trials: Vec<TrialRecord> = configs
        .into_par_iter()
        .zip(specs.par_iter())
        .enumerate()
        .map(|(index, (params, spec))| {
            let seed = derive_seed(opts.seed, index as u64);
            let t0 = Instant::now();
            let res = cross_validate(spec, table, &folds, opts.folds, seed);
            let wall_time_ms = t0.elapsed().as_secs_f64() * 1e3;
            let (fold_rmse, mean_rmse, error) = match res {
                Ok(f) => {
                    let m = f.iter().sum::<f64>() / f.len() as f64;
                    (f, Some(m), None)
                }
                Err(e) => (Vec::new(), None, Some(e.to_string())),
            };
            TrialRecord {
                index,
                params,
                fold_rmse,
                mean_rmse,
                error,
                seed,
                wall_time_ms,
            }
        })
        .collect();

    let best_index = trials
        .iter()
        .filter_map(|t| t.mean_rmse.filter(|m| m.is_finite()).map(|m| (t.index, m)))
        .fold(None, |best: Option<(usize, f64)>, cur| match best {
            Some(b) if b.1 <= cur.1 => Some(b),
            _ => Some(cur),
        })
        .map(|b| b.0)
        .ok_or_else(|| Error::invalid("every search trial failed"))?;
    Ok(SearchResult {
        best_index,
        best_spec: specs[best_index].clone(),
        trials,
    })
}

pub fn write_trials_jsonl<W: Write>(trials: &[TrialRecord], mut out: W) -> Result<()> {
    for t in trials {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n").map_err(|e| Error::Io {
            path: "trials.jsonl".into(),
            source: e,
        })?;
    }
    Ok(())
}
