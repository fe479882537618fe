//! Temporal hold-out evaluation, attribution runs and the feature-subset
//! retraining protocol.

use serde::{Deserialize, Serialize};

use crate::dataio::{temporal_split, FeatureGroup, FeatureTable};
use crate::error::{Error, Result};
use crate::explain::{
    explain_rows, global_importance, sample_background, select_features, Attribution,
    ImportanceRanking, KernelShapOptions, SelectionRule, EXACT_MAX_FEATURES,
};
use crate::metrics::{
    anderson_darling_normality, default_hex_size, evaluate, hexbin, regional_percentage_error,
    EvalReport,
};
use crate::model::{fit_model, ModelSpec, TrainedModel};
use crate::rng::derive_seed;

pub struct SplitOutcome {
    pub report: EvalReport,
    pub model: TrainedModel,
    /// Table rows of the test year, aligned with `predictions`.
    pub test_rows: Vec<usize>,
    pub predictions: Vec<f64>,
}

/// Trains on all years before `test_year` and scores that year.
pub fn evaluate_split(
    name: &str,
    spec: &ModelSpec,
    table: &FeatureTable,
    test_year: i32,
    seed: u64,
) -> Result<SplitOutcome> {
    let split = temporal_split(table, test_year)?;
    if split.train.is_empty() {
        return Err(Error::invalid(format!(
            "no training years precede test year {test_year}"
        )));
    }
    let train = table.select_rows(&split.train);
    let test = table.select_rows(&split.test);
    let model = fit_model(spec, &train, seed)?;
    let train_pred = model.predict_table(&train)?;
    let pred = model.predict_table(&test)?;
    let residuals: Vec<f64> = test.target.iter().zip(&pred).map(|(t, p)| t - p).collect();
    let report = EvalReport {
        model: name.to_string(),
        train_years: train.years().into_iter().collect(),
        test_year,
        train_metrics: evaluate(&train_pred, &train.target)?,
        metrics: evaluate(&pred, &test.target)?,
        residual_test: anderson_darling_normality(&residuals).ok(),
        hexbin: hexbin(&pred, &test.target, default_hex_size(&test.target))?,
        per_region_error: regional_percentage_error(&test.region_id, &test.target, &pred)?.regions,
    };
    Ok(SplitOutcome {
        report,
        model,
        test_rows: split.test,
        predictions: pred,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainSettings {
    /// Training rows sampled as the background set.
    pub background: usize,
    /// Test rows explained (the first ones in table order); `None` for all.
    pub max_instances: Option<usize>,
    /// Kernel SHAP coalition budget; `None` picks exact enumeration when
    /// the feature count allows it and `2d + 512` otherwise.
    pub budget: Option<usize>,
    /// Force exact enumeration (feature count permitting).
    pub exact: bool,
    pub regularizer: f64,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        ExplainSettings {
            background: 100,
            max_instances: None,
            budget: None,
            exact: false,
            regularizer: 0.0,
        }
    }
}

pub struct Explanation {
    pub attributions: Vec<Attribution>,
    pub ranking: ImportanceRanking,
    /// Table rows explained, aligned with `attributions`.
    pub rows: Vec<usize>,
}

/// Attributes `model` on `rows` of `table`, with a background drawn from
/// `background_rows`.
pub fn explain_model(
    model: &TrainedModel,
    table: &FeatureTable,
    rows: &[usize],
    background_rows: &[usize],
    settings: &ExplainSettings,
    seed: u64,
) -> Result<Explanation> {
    let names = model.feature_names.clone();
    let cols = names
        .iter()
        .map(|n| {
            table
                .column_index(n)
                .ok_or_else(|| Error::MissingColumn(n.clone()))
        })
        .collect::<Result<Vec<usize>>>()?;
    let rows: Vec<usize> = match settings.max_instances {
        Some(m) => rows.iter().copied().take(m).collect(),
        None => rows.to_vec(),
    };
    if rows.is_empty() {
        return Err(Error::invalid("no instances to explain"));
    }
    let x = table.features.select_rows(&rows).select_cols(&cols);
    let pool = table
        .features
        .select_rows(background_rows)
        .select_cols(&cols);
    let background = sample_background(&pool, settings.background, derive_seed(seed, 0));
    let d = names.len();
    let exact = (settings.exact || settings.budget.is_none()) && d <= EXACT_MAX_FEATURES;
    let opts = KernelShapOptions {
        budget: settings.budget.unwrap_or(2 * d + 512),
        seed: derive_seed(seed, 1),
        regularizer: settings.regularizer,
    };
    let mut attributions = explain_rows(model, &x, &background, (!exact).then_some(&opts))?;
    for (a, &r) in attributions.iter_mut().zip(&rows) {
        a.instance = Some(r);
    }
    let ranking = global_importance(&attributions, &x, &names)?;
    Ok(Explanation {
        attributions,
        ranking,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Top(f64),
    Group(FeatureGroup),
}

impl Subset {
    pub fn label(&self) -> String {
        match self {
            Subset::Top(p) if *p >= 1.0 => "full".to_string(),
            Subset::Top(p) => format!("top_{}pct", (p * 100.0).round()),
            Subset::Group(g) => format!("{}_only", g.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetResult {
    pub subset: String,
    pub n_features: usize,
    pub metrics: crate::metrics::MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub model: String,
    pub test_year: i32,
    pub ranking: ImportanceRanking,
    pub results: Vec<SubsetResult>,
}

/// Fits on the full feature set, ranks features by mean |φ| on the test
/// year, then retrains on each subset and scores the test year again.
pub fn feature_selection(
    name: &str,
    spec: &ModelSpec,
    table: &FeatureTable,
    test_year: i32,
    subsets: &[Subset],
    settings: &ExplainSettings,
    seed: u64,
) -> Result<SelectionReport> {
    let full = evaluate_split(name, spec, table, test_year, seed)?;
    let split = temporal_split(table, test_year)?;
    let expl = explain_model(
        &full.model,
        table,
        &split.test,
        &split.train,
        settings,
        derive_seed(seed, 7),
    )?;
    let mut results = Vec::with_capacity(subsets.len());
    for s in subsets {
        let rule = match *s {
            Subset::Top(p) => SelectionRule::TopFraction(p),
            Subset::Group(g) => SelectionRule::Group(g),
        };
        let cols = select_features(&expl.ranking, &table.descriptors, rule)?;
        let metrics = if cols.len() == table.n_features() {
            full.report.metrics.clone()
        } else {
            evaluate_split(name, spec, &table.select_columns(&cols), test_year, seed)?
                .report
                .metrics
        };
        results.push(SubsetResult {
            subset: s.label(),
            n_features: cols.len(),
            metrics,
        });
    }
    Ok(SelectionReport {
        model: name.to_string(),
        test_year,
        ranking: expl.ranking,
        results,
    })
}
