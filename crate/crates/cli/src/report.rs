//! `report.json` and its plain-text table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use yieldbench::bench::SelectionReport;
use yieldbench::explain::{Attribution, ImportanceRanking};
use yieldbench::metrics::{EvalReport, MetricSet};
use yieldbench::model::ModelSpec;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(flatten)]
    pub body: ReportBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum ReportBody {
    Train { models: Vec<TrainSummary> },
    Tune { models: Vec<TuneSummary> },
    Evaluate { evaluations: Vec<EvalEntry> },
    Explain { explanations: Vec<ExplainSummary> },
    Select { selections: Vec<SelectionReport> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub name: String,
    pub family: String,
    pub train_years: Vec<i32>,
    pub n_train: usize,
    pub train_metrics: MetricSet,
    /// Networks only.
    pub best_epoch: Option<usize>,
    pub epochs_run: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneSummary {
    pub name: String,
    pub holdout_year: Option<i32>,
    pub n_trials: usize,
    pub n_failed: usize,
    pub best_index: usize,
    pub best_params: BTreeMap<String, Value>,
    pub best_mean_rmse: Option<f64>,
    pub best_spec: ModelSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    #[serde(flatten)]
    pub report: EvalReport,
    pub hex_size: f64,
    /// Test-year residuals (observed minus predicted) in table order.
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainSummary {
    pub model: String,
    pub test_year: i32,
    pub n_instances: usize,
    pub background: usize,
    pub exact: bool,
    pub budget_used: usize,
    pub max_efficiency_gap: f64,
    pub feature_names: Vec<String>,
    pub top_k: usize,
    pub force_plots: usize,
    pub ranking: ImportanceRanking,
}

/// One line of `attributions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionLine {
    pub model: String,
    pub region_id: String,
    pub year: i32,
    pub values: Vec<f64>,
    #[serde(flatten)]
    pub attribution: Attribution,
}

impl Report {
    pub fn new(seed: u64, body: ReportBody) -> Self {
        Report {
            schema_version: SCHEMA_VERSION,
            seed,
            body,
        }
    }

    pub fn is_empty(&self) -> bool {
        match &self.body {
            ReportBody::Train { models } => models.is_empty(),
            ReportBody::Tune { models } => models.is_empty(),
            ReportBody::Evaluate { evaluations } => evaluations.is_empty(),
            ReportBody::Explain { explanations } => explanations.is_empty(),
            ReportBody::Select { selections } => selections.is_empty(),
        }
    }

    pub fn command(&self) -> &'static str {
        match &self.body {
            ReportBody::Train { .. } => "train",
            ReportBody::Tune { .. } => "tune",
            ReportBody::Evaluate { .. } => "evaluate",
            ReportBody::Explain { .. } => "explain",
            ReportBody::Select { .. } => "select",
        }
    }

    pub fn from_json(s: &str) -> Result<Report, CliError> {
        let v: Value = serde_json::from_str(s)
            .map_err(|e| CliError::Data(format!("report is not JSON: {e}")))?;
        match v.get("schema_version").and_then(Value::as_u64) {
            Some(x) if x == SCHEMA_VERSION as u64 => {}
            Some(x) => {
                return Err(CliError::Data(format!(
                    "report schema version {x} is not supported"
                )))
            }
            None => return Err(CliError::Data("report has no schema_version".into())),
        }
        serde_json::from_value(v).map_err(|e| CliError::Data(format!("malformed report: {e}")))
    }
}

/// The JSON document and the human-readable table for `report`.
pub fn write_report(report: &Report) -> Result<(String, String), CliError> {
    if report.is_empty() {
        return Err(CliError::Data(format!(
            "`{}` produced no results",
            report.command()
        )));
    }
    let mut json =
        serde_json::to_string_pretty(report).map_err(|e| CliError::Data(e.to_string()))?;
    json.push('\n');
    Ok((json, render_table(report)))
}

fn years(ys: &[i32]) -> String {
    match (ys.first(), ys.last()) {
        (Some(a), Some(b)) if a != b => format!("{a}-{b}"),
        (Some(a), _) => a.to_string(),
        _ => "-".into(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |cells: &[String], out: &mut String| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&width)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(
        &header.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
        &mut out,
    );
    line(
        &width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>(),
        &mut out,
    );
    for r in rows {
        line(r, &mut out);
    }
    out
}

pub fn render_table(report: &Report) -> String {
    match &report.body {
        ReportBody::Train { models } => table(
            &[
                "model",
                "family",
                "train years",
                "n",
                "train RMSE",
                "train MAE",
                "best epoch",
            ],
            &models
                .iter()
                .map(|m| {
                    vec![
                        m.name.clone(),
                        m.family.clone(),
                        years(&m.train_years),
                        m.n_train.to_string(),
                        format!("{:.4}", m.train_metrics.rmse),
                        format!("{:.4}", m.train_metrics.mae),
                        m.best_epoch.map_or_else(|| "-".into(), |e| e.to_string()),
                    ]
                })
                .collect::<Vec<_>>(),
        ),
        ReportBody::Tune { models } => table(
            &[
                "model",
                "trials",
                "failed",
                "best trial",
                "CV RMSE",
                "best params",
            ],
            &models
                .iter()
                .map(|m| {
                    vec![
                        m.name.clone(),
                        m.n_trials.to_string(),
                        m.n_failed.to_string(),
                        m.best_index.to_string(),
                        opt(m.best_mean_rmse),
                        serde_json::to_string(&m.best_params).unwrap_or_default(),
                    ]
                })
                .collect::<Vec<_>>(),
        ),
        ReportBody::Evaluate { evaluations } => table(
            &[
                "model",
                "train years",
                "test year",
                "train RMSE",
                "train MAE",
                "test RMSE",
                "test MAE",
                "paper_r",
                "pearson r",
                "AD p",
            ],
            &evaluations
                .iter()
                .map(|e| {
                    let r = &e.report;
                    let clamp = if r.metrics.flags.paper_r_clamped {
                        "*"
                    } else {
                        ""
                    };
                    vec![
                        r.model.clone(),
                        years(&r.train_years),
                        r.test_year.to_string(),
                        format!("{:.4}", r.train_metrics.rmse),
                        format!("{:.4}", r.train_metrics.mae),
                        format!("{:.4}", r.metrics.rmse),
                        format!("{:.4}", r.metrics.mae),
                        format!("{:.4}{clamp}", r.metrics.paper_r),
                        format!("{:.4}", r.metrics.pearson_r),
                        opt(r.residual_test.as_ref().map(|t| t.p_value)),
                    ]
                })
                .collect::<Vec<_>>(),
        ),
        ReportBody::Explain { explanations } => {
            let mut out = String::new();
            for e in explanations {
                let _ = writeln!(
                    out,
                    "{} on {}: {} instances, {} background rows, {}, max efficiency gap {:.2e}",
                    e.model,
                    e.test_year,
                    e.n_instances,
                    e.background,
                    if e.exact {
                        "exact".to_string()
                    } else {
                        format!("{} coalitions", e.budget_used)
                    },
                    e.max_efficiency_gap
                );
                let rows: Vec<Vec<String>> = e
                    .ranking
                    .entries
                    .iter()
                    .take(e.top_k)
                    .enumerate()
                    .map(|(i, x)| {
                        vec![
                            (i + 1).to_string(),
                            x.feature.clone(),
                            format!("{:.5}", x.mean_abs_phi),
                            serde_json::to_value(x.sign)
                                .ok()
                                .and_then(|v| v.as_str().map(String::from))
                                .unwrap_or_default(),
                        ]
                    })
                    .collect();
                out += &table(&["rank", "feature", "mean |phi|", "sign"], &rows);
            }
            out
        }
        ReportBody::Select { selections } => {
            let mut out = String::new();
            for s in selections {
                let mut header = vec!["metric".to_string()];
                header.extend(
                    s.results
                        .iter()
                        .map(|r| format!("{} ({})", r.subset, r.n_features)),
                );
                let header: Vec<&str> = header.iter().map(String::as_str).collect();
                let metric = |name: &str, f: &dyn Fn(&MetricSet) -> f64| -> Vec<String> {
                    std::iter::once(name.to_string())
                        .chain(s.results.iter().map(|r| format!("{:.4}", f(&r.metrics))))
                        .collect()
                };
                let _ = writeln!(out, "{} on {}", s.model, s.test_year);
                out += &table(
                    &header,
                    &[
                        metric("RMSE", &|m| m.rmse),
                        metric("MAE", &|m| m.mae),
                        metric("paper_r", &|m| m.paper_r),
                        metric("pearson r", &|m| m.pearson_r),
                    ],
                );
            }
            out
        }
    }
}
