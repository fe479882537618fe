//! TOML run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;
use yieldbench::bench::ExplainSettings;
use yieldbench::dataio::{EffectTerm, SynthSpec, DEFAULT_WEEKS};
use yieldbench::model::ModelSpec;
use yieldbench::tuning::SearchSpace;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub test_years: Vec<i32>,
    pub data: DataConfig,
    #[serde(default)]
    pub models: Vec<ModelEntry>,
    #[serde(default)]
    pub tune: TuneConfig,
    #[serde(default)]
    pub explain: ExplainConfig,
    #[serde(default)]
    pub select: SelectConfig,
    #[serde(default)]
    pub plot: PlotConfig,
}

/// Exactly one of `csv` and `synth`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Weeks per season (W); a CSV is read against this schema.
    pub weeks: Option<usize>,
    pub csv: Option<PathBuf>,
    pub synth: Option<SynthConfig>,
}

/// Starts from the benchmark generator; any field given replaces the
/// benchmark's value.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "default_regions")]
    pub n_regions: usize,
    #[serde(default = "default_years")]
    pub n_years: usize,
    pub seed: Option<u64>,
    pub first_year: Option<i32>,
    pub noise_sigma: Option<f64>,
    pub intercept: Option<f64>,
    pub terms: Option<Vec<EffectTerm>>,
    pub null_features: Option<Vec<String>>,
}

fn default_regions() -> usize {
    60
}

fn default_years() -> usize {
    12
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub name: Option<String>,
    pub family: String,
    /// Hyperparameters; nested tables address nested fields.
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
    pub search: Option<SearchSpace>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneConfig {
    pub budget: usize,
    pub folds: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            budget: 50,
            folds: 3,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    /// Model entry name; the first model when unset.
    pub model: Option<String>,
    /// The last test year when unset.
    pub test_year: Option<i32>,
    #[serde(flatten)]
    pub settings: ExplainSettings,
    pub top_k: usize,
    /// Force plots drawn for the first explained instances.
    pub force_plots: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            model: None,
            test_year: None,
            settings: ExplainSettings::default(),
            top_k: 15,
            force_plots: 3,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectConfig {
    pub model: Option<String>,
    pub test_year: Option<i32>,
    pub fractions: Vec<f64>,
    pub weather_only: bool,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            model: None,
            test_year: None,
            fractions: vec![1.0, 0.75, 0.5],
            weather_only: true,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlotConfig {
    /// Directory holding the artifacts to re-render; the output directory
    /// when unset.
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub enum DataSource {
    Csv { path: PathBuf, weeks: usize },
    Synth(SynthSpec),
}

/// A model entry resolved to its name and full hyperparameters.
#[derive(Debug, Clone)]
pub struct NamedModel {
    pub name: String,
    pub spec: ModelSpec,
    pub search: Option<SearchSpace>,
}

fn flatten_params(prefix: &str, map: &BTreeMap<String, Value>, out: &mut BTreeMap<String, Value>) {
    for (k, v) in map {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            // Nested tables edit fields one by one instead of replacing the
            // whole sub-struct.
            Value::Object(inner) => {
                let inner: BTreeMap<String, Value> = inner.clone().into_iter().collect();
                flatten_params(&path, &inner, out);
            }
            _ => {
                out.insert(path, v.clone());
            }
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        // Relative data paths are taken from the config's directory.
        if let Some(csv) = cfg.data.csv.as_mut() {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(cfg)
    }

    pub fn data_source(&self) -> Result<DataSource, CliError> {
        match (&self.data.csv, &self.data.synth) {
            (Some(path), None) => Ok(DataSource::Csv {
                path: path.clone(),
                weeks: self.data.weeks.unwrap_or(DEFAULT_WEEKS),
            }),
            (None, Some(s)) => {
                let weeks = self.data.weeks.unwrap_or(DEFAULT_WEEKS);
                let seed = s.seed.or(self.seed).unwrap_or(0);
                let mut spec = SynthSpec::benchmark(s.n_regions, s.n_years, weeks, seed);
                if let Some(v) = s.first_year {
                    spec.first_year = v;
                }
                if let Some(v) = s.noise_sigma {
                    spec.noise_sigma = v;
                }
                if let Some(v) = s.intercept {
                    spec.intercept = v;
                }
                if let Some(v) = &s.terms {
                    spec.terms = v.clone();
                }
                if let Some(v) = &s.null_features {
                    spec.null_features = v.clone();
                }
                Ok(DataSource::Synth(spec))
            }
            _ => Err(CliError::Usage(
                "config [data] needs exactly one of `csv` or `synth`".into(),
            )),
        }
    }

    pub fn models(&self) -> Result<Vec<NamedModel>, CliError> {
        if self.models.is_empty() {
            return Err(CliError::Usage("config lists no [[models]]".into()));
        }
        let mut out: Vec<NamedModel> = Vec::with_capacity(self.models.len());
        for m in &self.models {
            let name = m.name.clone().unwrap_or_else(|| m.family.clone());
            if !name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return Err(CliError::Usage(format!(
                    "model name `{name}` may only use letters, digits, `_` and `-`"
                )));
            }
            if out.iter().any(|o| o.name == name) {
                return Err(CliError::Usage(format!(
                    "model name `{name}` is used twice"
                )));
            }
            let base =
                ModelSpec::default_for(&m.family).map_err(|e| CliError::Usage(e.to_string()))?;
            let mut overrides = BTreeMap::new();
            flatten_params("", &m.params, &mut overrides);
            let spec = base
                .with_overrides(&overrides)
                .map_err(|e| CliError::Usage(format!("model `{name}`: {e}")))?;
            out.push(NamedModel {
                name,
                spec,
                search: m.search.clone(),
            });
        }
        Ok(out)
    }

    pub fn model_named(&self, wanted: Option<&str>) -> Result<NamedModel, CliError> {
        let models = self.models()?;
        match wanted {
            None => Ok(models
                .into_iter()
                .next()
                .expect("models() rejects an empty list")),
            Some(w) => models
                .into_iter()
                .find(|m| m.name == w)
                .ok_or_else(|| CliError::Usage(format!("no model named `{w}` in the config"))),
        }
    }
}
