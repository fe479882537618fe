use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use yieldbench::bench::{evaluate_split, explain_model, feature_selection, Subset};
use yieldbench::dataio::{
    default_schema, generate_synthetic, load_table, temporal_split, FeatureGroup, FeatureTable,
};
use yieldbench::explain::force_plot_data;
use yieldbench::metrics::{default_hex_size, evaluate};
use yieldbench::model::{fit_model, FittedModel, TrainedModel};
use yieldbench::tuning::{search, SearchOptions, TrialRecord};

use crate::config::{DataSource, RunConfig};
use crate::plot::{emit_svg, PlotData, PlotSpec};
use crate::report::{
    write_report, AttributionLine, EvalEntry, ExplainSummary, Report, ReportBody, TrainSummary,
    TuneSummary,
};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Synth,
    Train,
    Tune,
    Evaluate,
    Explain,
    Select,
    Plot,
}

/// Command-line flags that take precedence over the config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

const DEFAULT_OUT: &str = "yieldbench-out";
const SELECTION_BARS: usize = 15;

struct Ctx {
    cfg: RunConfig,
    seed: Option<u64>,
    out: PathBuf,
}

impl Ctx {
    fn seed_required(&self, cmd: &str) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| {
            CliError::Usage(format!(
                "`{cmd}` needs a seed: pass --seed N or set `seed` in the config"
            ))
        })
    }

    fn table(&self) -> Result<FeatureTable, CliError> {
        let table = match self.cfg.data_source()? {
            DataSource::Csv { path, weeks } => load_table(&path, &default_schema(weeks))?,
            DataSource::Synth(spec) => generate_synthetic(&spec)?,
        };
        for y in &self.cfg.test_years {
            if !table.year.contains(y) {
                return Err(CliError::Data(format!(
                    "test year {y} is not present in the data"
                )));
            }
        }
        Ok(table)
    }

    /// Configured test years, or the last year of the table.
    fn test_years(&self, table: &FeatureTable) -> Vec<i32> {
        if self.cfg.test_years.is_empty() {
            table.years().last().copied().into_iter().collect()
        } else {
            self.cfg.test_years.clone()
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Runs `command` and returns the files it wrote.
pub fn run(command: Command, config: &Path, flags: &Overrides) -> Result<Vec<PathBuf>, CliError> {
    let cfg = RunConfig::load(config)?;
    let out = flags
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let ctx = Ctx {
        seed: flags.seed.or(cfg.seed),
        cfg,
        out,
    };
    match command {
        Command::Synth => synth(&ctx),
        Command::Train => train(&ctx),
        Command::Tune => tune(&ctx),
        Command::Evaluate => evaluate_cmd(&ctx),
        Command::Explain => explain(&ctx),
        Command::Select => select(&ctx),
        Command::Plot => {
            let input = ctx
                .cfg
                .plot
                .input
                .clone()
                .unwrap_or_else(|| ctx.out.clone());
            let report = Report::from_json(&read_file(&input.join("report.json"))?)?;
            render(&report, &input, &ctx.out)
        }
    }
}

fn synth(ctx: &Ctx) -> Result<Vec<PathBuf>, CliError> {
    let DataSource::Synth(spec) = ctx.cfg.data_source()? else {
        return Err(CliError::Usage(
            "`synth` needs a [data.synth] section".into(),
        ));
    };
    let table = generate_synthetic(&spec)?;
    let csv = ctx.path("data.csv");
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    write_file(&csv, &buf)?;
    let spec_path = ctx.path("synth.json");
    let mut json =
        serde_json::to_string_pretty(&spec).map_err(|e| CliError::Data(e.to_string()))?;
    json.push('\n');
    write_file(&spec_path, json.as_bytes())?;
    Ok(vec![csv, spec_path])
}

fn finish(ctx: &Ctx, report: Report, mut written: Vec<PathBuf>) -> Result<Vec<PathBuf>, CliError> {
    let (json, text) = write_report(&report)?;
    let (jp, tp) = (ctx.path("report.json"), ctx.path("report.txt"));
    write_file(&jp, json.as_bytes())?;
    write_file(&tp, text.as_bytes())?;
    print!("{text}");
    written.push(jp);
    written.push(tp);
    written.extend(render(&report, &ctx.out, &ctx.out)?);
    Ok(written)
}

fn save_model(ctx: &Ctx, name: &str, model: &TrainedModel) -> Result<PathBuf, CliError> {
    let p = ctx.path(&format!("model_{name}.json"));
    let mut json = model.to_json()?;
    json.push('\n');
    write_file(&p, json.as_bytes())?;
    Ok(p)
}

fn train(ctx: &Ctx) -> Result<Vec<PathBuf>, CliError> {
    let seed = ctx.seed_required("train")?;
    let models = ctx.cfg.models()?;
    let table = ctx.table()?;
    // Fit on every year before the first test year, so no test year leaks.
    let rows: Vec<usize> = match ctx.cfg.test_years.iter().min() {
        Some(&first) => (0..table.n_rows())
            .filter(|&i| table.year[i] < first)
            .collect(),
        None => (0..table.n_rows()).collect(),
    };
    if rows.is_empty() {
        return Err(CliError::Data(
            "no training rows precede the first test year".into(),
        ));
    }
    let train = table.select_rows(&rows);
    let mut written = Vec::new();
    let mut summaries = Vec::new();
    for m in &models {
        let model = fit_model(&m.spec, &train, seed)?;
        let pred = model.predict_table(&train)?;
        let (best_epoch, epochs_run) = match &model.model {
            FittedModel::Network { net, .. } => (Some(net.best_epoch), Some(net.history.len())),
            _ => (None, None),
        };
        summaries.push(TrainSummary {
            name: m.name.clone(),
            family: m.spec.family().to_string(),
            train_years: train.years().into_iter().collect(),
            n_train: train.n_rows(),
            train_metrics: evaluate(&pred, &train.target)?,
            best_epoch,
            epochs_run,
        });
        written.push(save_model(ctx, &m.name, &model)?);
    }
    finish(
        ctx,
        Report::new(seed, ReportBody::Train { models: summaries }),
        written,
    )
}

#[derive(serde::Serialize)]
struct TrialLine<'a> {
    model: &'a str,
    #[serde(flatten)]
    trial: &'a TrialRecord,
}

fn tune(ctx: &Ctx) -> Result<Vec<PathBuf>, CliError> {
    let seed = ctx.seed_required("tune")?;
    let models = ctx.cfg.models()?;
    if models.iter().all(|m| m.search.is_none()) {
        return Err(CliError::Usage(
            "`tune` needs at least one model with a [models.search] space".into(),
        ));
    }
    let table = ctx.table()?;
    let holdout = ctx.cfg.test_years.iter().min().copied();
    let rows: Vec<usize> = (0..table.n_rows())
        .filter(|&i| holdout.is_none_or(|h| table.year[i] < h))
        .collect();
    if rows.is_empty() {
        return Err(CliError::Data("no rows precede the first test year".into()));
    }
    let data = table.select_rows(&rows);
    let opts = SearchOptions {
        budget: ctx.cfg.tune.budget,
        folds: ctx.cfg.tune.folds,
        seed,
        holdout_year: holdout,
    };
    let trials_path = ctx.path("trials.jsonl");
    let mut lines = Vec::new();
    let mut summaries = Vec::new();
    for m in &models {
        let Some(space) = &m.search else { continue };
        let res = search(&m.spec, space, &opts, &data)?;
        for t in &res.trials {
            serde_json::to_writer(
                &mut lines,
                &TrialLine {
                    model: &m.name,
                    trial: t,
                },
            )
            .map_err(|e| CliError::Data(e.to_string()))?;
            lines.push(b'\n');
        }
        let best = res.best();
        summaries.push(TuneSummary {
            name: m.name.clone(),
            holdout_year: holdout,
            n_trials: res.trials.len(),
            n_failed: res.trials.iter().filter(|t| t.error.is_some()).count(),
            best_index: res.best_index,
            best_params: best.params.clone(),
            best_mean_rmse: best.mean_rmse,
            best_spec: res.best_spec.clone(),
        });
    }
    write_file(&trials_path, &lines)?;
    finish(
        ctx,
        Report::new(seed, ReportBody::Tune { models: summaries }),
        vec![trials_path],
    )
}

fn evaluate_cmd(ctx: &Ctx) -> Result<Vec<PathBuf>, CliError> {
    let seed = ctx.seed.unwrap_or(0);
    let models = ctx.cfg.models()?;
    let table = ctx.table()?;
    let mut entries = Vec::new();
    let mut csv = String::from("model,test_year,region_id,n,mean_pct_error,max_pct_error\n");
    for year in ctx.test_years(&table) {
        let test_truth: Vec<f64> = temporal_split(&table, year)?
            .test
            .iter()
            .map(|&i| table.target[i])
            .collect();
        for m in &models {
            let o = evaluate_split(&m.name, &m.spec, &table, year, seed)?;
            for r in &o.report.per_region_error {
                csv += &format!(
                    "{},{},{},{},{},{}\n",
                    m.name, year, r.region_id, r.n, r.mean_pct_error, r.max_pct_error
                );
            }
            let residuals = test_truth
                .iter()
                .zip(&o.predictions)
                .map(|(t, p)| t - p)
                .collect();
            entries.push(EvalEntry {
                hex_size: default_hex_size(&test_truth),
                residuals,
                report: o.report,
            });
        }
    }
    let csv_path = ctx.path("per_region_error.csv");
    write_file(&csv_path, csv.as_bytes())?;
    finish(
        ctx,
        Report::new(
            seed,
            ReportBody::Evaluate {
                evaluations: entries,
            },
        ),
        vec![csv_path],
    )
}

fn pick_year(ctx: &Ctx, table: &FeatureTable, wanted: Option<i32>) -> Result<i32, CliError> {
    let year = wanted
        .or_else(|| ctx.test_years(table).last().copied())
        .ok_or_else(|| CliError::Data("table is empty".into()))?;
    if !table.year.contains(&year) {
        return Err(CliError::Data(format!(
            "test year {year} is not present in the data"
        )));
    }
    Ok(year)
}

fn explain(ctx: &Ctx) -> Result<Vec<PathBuf>, CliError> {
    let seed = ctx.seed_required("explain")?;
    let ec = &ctx.cfg.explain;
    let m = ctx.cfg.model_named(ec.model.as_deref())?;
    let table = ctx.table()?;
    let year = pick_year(ctx, &table, ec.test_year)?;
    let fitted = evaluate_split(&m.name, &m.spec, &table, year, seed)?;
    let split = temporal_split(&table, year)?;
    let expl = explain_model(
        &fitted.model,
        &table,
        &split.test,
        &split.train,
        &ec.settings,
        seed,
    )?;

    let cols: Vec<usize> = fitted
        .model
        .feature_names
        .iter()
        .map(|n| {
            table
                .column_index(n)
                .expect("model was fitted on this table")
        })
        .collect();
    let mut lines = Vec::new();
    for (a, &row) in expl.attributions.iter().zip(&expl.rows) {
        let line = AttributionLine {
            model: m.name.clone(),
            region_id: table.region_id[row].clone(),
            year: table.year[row],
            values: cols.iter().map(|&c| table.features.get(row, c)).collect(),
            attribution: a.clone(),
        };
        serde_json::to_writer(&mut lines, &line).map_err(|e| CliError::Data(e.to_string()))?;
        lines.push(b'\n');
    }
    let attr_path = ctx.path("attributions.jsonl");
    write_file(&attr_path, &lines)?;
    let rank_path = ctx.path("ranking.json");
    let mut rank =
        serde_json::to_string_pretty(&expl.ranking).map_err(|e| CliError::Data(e.to_string()))?;
    rank.push('\n');
    write_file(&rank_path, rank.as_bytes())?;
    let model_path = save_model(ctx, &m.name, &fitted.model)?;

    let summary = ExplainSummary {
        model: m.name.clone(),
        test_year: year,
        n_instances: expl.attributions.len(),
        background: ec.settings.background.min(split.train.len()),
        exact: expl.attributions.iter().all(|a| a.exact),
        budget_used: expl
            .attributions
            .iter()
            .map(|a| a.budget_used)
            .max()
            .unwrap_or(0),
        max_efficiency_gap: expl
            .attributions
            .iter()
            .map(|a| a.efficiency_gap())
            .fold(0.0, f64::max),
        feature_names: fitted.model.feature_names.clone(),
        top_k: ec.top_k,
        force_plots: ec.force_plots,
        ranking: expl.ranking,
    };
    finish(
        ctx,
        Report::new(
            seed,
            ReportBody::Explain {
                explanations: vec![summary],
            },
        ),
        vec![attr_path, rank_path, model_path],
    )
}

fn select(ctx: &Ctx) -> Result<Vec<PathBuf>, CliError> {
    let seed = ctx.seed.unwrap_or(0);
    let sc = &ctx.cfg.select;
    let m = ctx.cfg.model_named(sc.model.as_deref())?;
    let table = ctx.table()?;
    let year = pick_year(ctx, &table, sc.test_year)?;
    let mut subsets: Vec<Subset> = sc.fractions.iter().map(|&p| Subset::Top(p)).collect();
    if sc.weather_only {
        subsets.push(Subset::Group(FeatureGroup::Weather));
    }
    if subsets.is_empty() {
        return Err(CliError::Usage(
            "[select] lists no fractions and weather_only is off".into(),
        ));
    }
    let rep = feature_selection(
        &m.name,
        &m.spec,
        &table,
        year,
        &subsets,
        &ctx.cfg.explain.settings,
        seed,
    )?;
    let rank_path = ctx.path("ranking.json");
    let mut rank =
        serde_json::to_string_pretty(&rep.ranking).map_err(|e| CliError::Data(e.to_string()))?;
    rank.push('\n');
    write_file(&rank_path, rank.as_bytes())?;
    finish(
        ctx,
        Report::new(
            seed,
            ReportBody::Select {
                selections: vec![rep],
            },
        ),
        vec![rank_path],
    )
}

fn svg(out: &Path, name: &str, spec: PlotSpec, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let p = out.join(name);
    write_file(&p, emit_svg(&spec)?.as_bytes())?;
    written.push(p);
    Ok(())
}

fn residual_bins(n: usize) -> usize {
    ((n as f64).sqrt().ceil() as usize).clamp(5, 40)
}

/// Draws the plots belonging to `report`, reading any further artifacts
/// from `input`.
pub fn render(report: &Report, input: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    match &report.body {
        ReportBody::Evaluate { evaluations } => {
            for e in evaluations {
                let r = &e.report;
                let tag = format!("{}_{}", r.model, r.test_year);
                let data = PlotData::Hexbin {
                    hex_size: e.hex_size,
                    bins: r.hexbin.clone(),
                };
                svg(
                    out,
                    &format!("hexbin_{tag}.svg"),
                    PlotSpec::new(
                        format!("{} {}: predicted vs observed", r.model, r.test_year),
                        data,
                    ),
                    &mut written,
                )?;
                let data = PlotData::ResidualHist {
                    residuals: e.residuals.clone(),
                    bins: residual_bins(e.residuals.len()),
                };
                svg(
                    out,
                    &format!("residuals_{tag}.svg"),
                    PlotSpec::new(format!("{} {}: residuals", r.model, r.test_year), data),
                    &mut written,
                )?;
            }
        }
        ReportBody::Train { models } => {
            for m in models {
                let model = TrainedModel::from_json(&read_file(
                    &input.join(format!("model_{}.json", m.name)),
                )?)?;
                if let FittedModel::Network { net, .. } = &model.model {
                    let spec = PlotSpec::new(
                        format!("{}: training loss", m.name),
                        PlotData::LossCurve(net.history.clone()),
                    );
                    svg(out, &format!("loss_{}.svg", m.name), spec, &mut written)?;
                }
            }
        }
        ReportBody::Tune { .. } => {}
        ReportBody::Explain { explanations } => {
            for e in explanations {
                let bars = PlotData::ImportanceBar(e.ranking.top(e.top_k).entries);
                svg(
                    out,
                    &format!("importance_{}.svg", e.model),
                    PlotSpec::new(
                        format!("{} {}: mean |SHAP value|", e.model, e.test_year),
                        bars,
                    ),
                    &mut written,
                )?;
                if e.force_plots == 0 {
                    continue;
                }
                let path = input.join("attributions.jsonl");
                let file = fs::File::open(&path).map_err(|err| CliError::io(&path, err))?;
                let mut k = 0;
                for line in BufReader::new(file).lines() {
                    let line = line.map_err(|err| CliError::io(&path, err))?;
                    let a: AttributionLine = serde_json::from_str(&line)
                        .map_err(|err| CliError::Data(format!("{}: {err}", path.display())))?;
                    if a.model != e.model {
                        continue;
                    }
                    let force = force_plot_data(&a.attribution, &e.feature_names, &a.values)?;
                    let title = format!("{}: region {} in {}", e.model, a.region_id, a.year);
                    svg(
                        out,
                        &format!("force_{}_{}.svg", e.model, k + 1),
                        PlotSpec::new(title, PlotData::Force(force)),
                        &mut written,
                    )?;
                    k += 1;
                    if k == e.force_plots {
                        break;
                    }
                }
            }
        }
        ReportBody::Select { selections } => {
            for s in selections {
                let bars = PlotData::ImportanceBar(s.ranking.top(SELECTION_BARS).entries);
                svg(
                    out,
                    &format!("importance_{}_{}.svg", s.model, s.test_year),
                    PlotSpec::new(
                        format!("{} {}: mean |SHAP value|", s.model, s.test_year),
                        bars,
                    ),
                    &mut written,
                )?;
            }
        }
    }
    Ok(written)
}
