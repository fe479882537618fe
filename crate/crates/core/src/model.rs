//! Uniform fit/predict front end over the nine regressors, with the scaler
//! and column layout each trained model needs.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataio::{
    static_column_names, FeatureDescriptor, FeatureGroup, FeatureTable, ScalerParams,
};
use crate::error::{Error, Result};
use crate::explain::Predictor;
use crate::instkern::{fit_svr, KnnModel, SvrParams};
use crate::linmod::{fit_lasso, fit_ridge, LassoOptions, LinearModel};
use crate::matrix::Matrix;
use crate::neural::{
    build_network, train_network, CnnArchitecture, DenseArchitecture, NetworkSpec, TrainConfig,
    TrainedNetwork, WEATHER_CHANNELS,
};
use crate::rng::derive_seed;
use crate::trees::{
    fit_gbt, fit_random_forest, fit_regression_tree, EnsembleModel, ForestParams, GbtParams,
    TreeParams,
};

pub const MODEL_FORMAT_VERSION: u32 = 1;

pub const FAMILIES: [&str; 9] = [
    "ridge", "lasso", "svr", "knn", "tree", "forest", "gbt", "dnn", "cnn",
];

fn default_ridge_lambda() -> f64 {
    1.0
}

fn default_lasso_lambda() -> f64 {
    0.01
}

fn default_k() -> usize {
    5
}

/// Model family plus hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    Ridge {
        /// Penalty on the squared-error sum: `(XᵀX + λI)w = Xᵀy`.
        #[serde(default = "default_ridge_lambda")]
        lambda: f64,
    },
    Lasso {
        /// Penalty on `(1/2n)·SSE`.
        #[serde(default = "default_lasso_lambda")]
        lambda: f64,
        #[serde(default)]
        options: LassoOptions,
    },
    Svr(SvrParams),
    Knn {
        #[serde(default = "default_k")]
        k: usize,
    },
    Tree(TreeParams),
    Forest(ForestParams),
    Gbt(GbtParams),
    Dnn {
        #[serde(default)]
        arch: DenseArchitecture,
        #[serde(default)]
        train: TrainConfig,
    },
    Cnn {
        #[serde(default)]
        arch: CnnArchitecture,
        /// Branch input length; defaults to the largest week index present.
        #[serde(default)]
        weeks: Option<usize>,
        #[serde(default)]
        train: TrainConfig,
    },
}

impl ModelSpec {
    pub fn default_for(family: &str) -> Result<ModelSpec> {
        Ok(match family {
            "ridge" => ModelSpec::Ridge {
                lambda: default_ridge_lambda(),
            },
            "lasso" => ModelSpec::Lasso {
                lambda: default_lasso_lambda(),
                options: LassoOptions::default(),
            },
            "svr" => ModelSpec::Svr(SvrParams::default()),
            "knn" => ModelSpec::Knn { k: default_k() },
            "tree" => ModelSpec::Tree(TreeParams::default()),
            "forest" => ModelSpec::Forest(ForestParams::default()),
            "gbt" => ModelSpec::Gbt(GbtParams::default()),
            "dnn" => ModelSpec::Dnn {
                arch: DenseArchitecture::default(),
                train: TrainConfig::default(),
            },
            "cnn" => ModelSpec::Cnn {
                arch: CnnArchitecture::default(),
                weeks: None,
                train: TrainConfig::default(),
            },
            other => return Err(Error::invalid(format!("unknown model family `{other}`"))),
        })
    }

    pub fn family(&self) -> &'static str {
        match self {
            ModelSpec::Ridge { .. } => "ridge",
            ModelSpec::Lasso { .. } => "lasso",
            ModelSpec::Svr(_) => "svr",
            ModelSpec::Knn { .. } => "knn",
            ModelSpec::Tree(_) => "tree",
            ModelSpec::Forest(_) => "forest",
            ModelSpec::Gbt(_) => "gbt",
            ModelSpec::Dnn { .. } => "dnn",
            ModelSpec::Cnn { .. } => "cnn",
        }
    }

    /// Replaces hyperparameters addressed by dotted paths such as
    /// `lambda` or `train.learning_rate`.
    pub fn with_overrides(&self, overrides: &BTreeMap<String, Value>) -> Result<ModelSpec> {
        let mut v = serde_json::to_value(self)?;
        for (path, val) in overrides {
            if path == "family" {
                return Err(Error::invalid("the model family cannot be searched over"));
            }
            set_path(&mut v, path, val.clone()).ok_or_else(|| {
                Error::invalid(format!(
                    "hyperparameter path `{path}` does not name a field"
                ))
            })?;
        }
        serde_json::from_value(v)
            .map_err(|e| Error::invalid(format!("invalid hyperparameters: {e}")))
    }
}

fn set_path(v: &mut Value, path: &str, val: Value) -> Option<()> {
    match path.split_once('.') {
        None => {
            v.as_object_mut()?.insert(path.to_string(), val);
        }
        Some((head, rest)) => {
            let child = v
                .as_object_mut()?
                .entry(head.to_string())
                .or_insert_with(|| Value::Object(Default::default()));
            set_path(child, rest, val)?;
        }
    }
    Some(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fitted", rename_all = "snake_case")]
pub enum FittedModel {
    Linear(LinearModel),
    Knn(KnnModel),
    Trees(EnsembleModel),
    Network {
        net: TrainedNetwork,
        /// CNN input slot for each table column (`None` if unused).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        layout: Option<Vec<Option<usize>>>,
    },
}

/// A fitted regressor over raw (unscaled) feature columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub seed: u64,
    pub feature_names: Vec<String>,
    pub scaler: ScalerParams,
    pub model: FittedModel,
}

/// Maps table columns to the CNN's `channels × weeks + static` input. Weeks
/// beyond `weeks` are dropped.
pub fn cnn_layout(descriptors: &[FeatureDescriptor], weeks: usize) -> Result<Vec<Option<usize>>> {
    let statics: Vec<&str> = static_column_names().collect();
    descriptors
        .iter()
        .map(|d| match (d.group, d.weather_var, d.week_index) {
            (FeatureGroup::Weather, Some(v), Some(k)) => {
                Ok((k <= weeks).then(|| v.index() * weeks + k - 1))
            }
            _ => statics
                .iter()
                .position(|s| *s == d.name)
                .map(|p| Some(WEATHER_CHANNELS * weeks + p))
                .ok_or_else(|| Error::Schema(format!("column `{}` has no CNN input slot", d.name))),
        })
        .collect()
}

fn max_week(descriptors: &[FeatureDescriptor]) -> usize {
    descriptors
        .iter()
        .filter_map(|d| d.week_index)
        .max()
        .unwrap_or(1)
}

/// Fits `spec` on every row of `table`. Features are z-scored with
/// statistics from these rows; `seed` drives all randomness.
pub fn fit_model(spec: &ModelSpec, table: &FeatureTable, seed: u64) -> Result<TrainedModel> {
    if table.n_rows() == 0 {
        return Err(Error::invalid("cannot fit on an empty table"));
    }
    let all: Vec<usize> = (0..table.n_rows()).collect();
    let scaler = ScalerParams::fit(&table.features, &all)?;
    let x = scaler.transform(&table.features)?;
    let y = &table.target;
    let model = match spec {
        ModelSpec::Ridge { lambda } => FittedModel::Linear(fit_ridge(&x, y, *lambda, true)?),
        ModelSpec::Lasso { lambda, options } => {
            FittedModel::Linear(fit_lasso(&x, y, *lambda, *options)?)
        }
        ModelSpec::Svr(p) => FittedModel::Linear(fit_svr(&x, y, p)?.model),
        ModelSpec::Knn { k } => FittedModel::Knn(KnnModel::fit(&x, y, *k)?),
        ModelSpec::Tree(p) => FittedModel::Trees(EnsembleModel::single(
            fit_regression_tree(&x, y, p)?,
            x.cols(),
        )),
        ModelSpec::Forest(p) => {
            FittedModel::Trees(fit_random_forest(&x, y, &ForestParams { seed, ..*p })?)
        }
        ModelSpec::Gbt(p) => FittedModel::Trees(fit_gbt(&x, y, p)?),
        ModelSpec::Dnn { arch, train } => {
            let net = build_network(
                &NetworkSpec::dense(arch.clone(), x.cols()),
                derive_seed(seed, 1),
            )?;
            let cfg = TrainConfig {
                seed,
                ..train.clone()
            };
            FittedModel::Network {
                net: train_network(net, &x, y, &cfg)?,
                layout: None,
            }
        }
        ModelSpec::Cnn { arch, weeks, train } => {
            let weeks = weeks.unwrap_or_else(|| max_week(&table.descriptors));
            let layout = cnn_layout(&table.descriptors, weeks)?;
            let net = build_network(&NetworkSpec::cnn(arch.clone(), weeks), derive_seed(seed, 1))?;
            let input = arrange(&x, &layout, net.input_dim());
            let cfg = TrainConfig {
                seed,
                ..train.clone()
            };
            FittedModel::Network {
                net: train_network(net, &input, y, &cfg)?,
                layout: Some(layout),
            }
        }
    };
    Ok(TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        spec: spec.clone(),
        seed,
        feature_names: table.feature_names(),
        scaler,
        model,
    })
}

fn arrange(x: &Matrix, layout: &[Option<usize>], dim: usize) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), dim);
    for (i, r) in x.iter_rows().enumerate() {
        let o = out.row_mut(i);
        for (v, slot) in r.iter().zip(layout) {
            if let Some(s) = slot {
                o[*s] = *v;
            }
        }
    }
    out
}

/// Rows per parallel prediction task.
const PREDICT_CHUNK: usize = 64;

impl TrainedModel {
    pub fn family(&self) -> &'static str {
        self.spec.family()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Predicts raw feature rows laid out as `feature_names`.
    pub fn predict(&self, raw: &Matrix) -> Result<Vec<f64>> {
        crate::error::check_dim(self.n_features(), raw.cols())?;
        let x = self.scaler.transform(raw)?;
        Ok(match &self.model {
            FittedModel::Linear(m) => m.predict(&x)?,
            FittedModel::Trees(m) => m.predict(&x)?,
            FittedModel::Knn(m) => par_rows(&x, |r| m.predict_row(r)),
            FittedModel::Network { net, layout: None } => par_rows(&x, |r| net.predict_row(r)),
            FittedModel::Network {
                net,
                layout: Some(l),
            } => {
                let input = arrange(&x, l, net.network.input_dim());
                par_rows(&input, |r| net.predict_row(r))
            }
        })
    }

    /// Predicts a table, matching its columns by name.
    pub fn predict_table(&self, table: &FeatureTable) -> Result<Vec<f64>> {
        let idx = self
            .feature_names
            .iter()
            .map(|n| {
                table
                    .column_index(n)
                    .ok_or_else(|| Error::MissingColumn(n.clone()))
            })
            .collect::<Result<Vec<usize>>>()?;
        if idx.iter().enumerate().all(|(i, &j)| i == j) && idx.len() == table.n_features() {
            self.predict(&table.features)
        } else {
            self.predict(&table.features.select_cols(&idx))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<TrainedModel> {
        let m: TrainedModel = serde_json::from_str(s)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "model file format {} is not supported (expected {MODEL_FORMAT_VERSION})",
                m.format_version
            )));
        }
        Ok(m)
    }
}

fn par_rows(x: &Matrix, f: impl Fn(&[f64]) -> f64 + Sync) -> Vec<f64> {
    let cols = x.cols().max(1);
    x.as_slice()
        .par_chunks(cols * PREDICT_CHUNK)
        .flat_map_iter(|chunk| chunk.chunks(cols).map(&f).collect::<Vec<_>>())
        .collect()
}

impl Predictor for TrainedModel {
    fn predict_matrix(&self, x: &Matrix) -> Vec<f64> {
        self.predict(x)
            .expect("explainer passes rows of the trained width")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, SynthSpec};

    fn small_table() -> FeatureTable {
        generate_synthetic(&SynthSpec::benchmark(8, 5, 24, 1)).unwrap()
    }

    #[test]
    fn every_family_fits_and_round_trips() {
        let t = small_table();
        for fam in FAMILIES {
            let mut spec = ModelSpec::default_for(fam).unwrap();
            let quick = TrainConfig {
                max_epochs: 3,
                ..Default::default()
            };
            spec = match spec {
                ModelSpec::Forest(p) => ModelSpec::Forest(ForestParams { n_trees: 5, ..p }),
                ModelSpec::Dnn { arch, .. } => ModelSpec::Dnn { arch, train: quick },
                ModelSpec::Cnn { .. } => ModelSpec::Cnn {
                    arch: CnnArchitecture::tiny(),
                    weeks: None,
                    train: quick,
                },
                s => s,
            };
            let m = fit_model(&spec, &t, 4).unwrap();
            assert_eq!(m.family(), fam);
            let p = m.predict_table(&t).unwrap();
            assert_eq!(p.len(), t.n_rows());
            assert!(p.iter().all(|v| v.is_finite()));
            let back = TrainedModel::from_json(&m.to_json().unwrap()).unwrap();
            assert_eq!(back.predict_table(&t).unwrap(), p, "{fam}");
        }
    }

    #[test]
    fn overrides_by_path() {
        let base = ModelSpec::default_for("cnn").unwrap();
        let mut o = BTreeMap::new();
        o.insert("train.learning_rate".to_string(), Value::from(0.01));
        o.insert("weeks".to_string(), Value::from(30));
        match base.with_overrides(&o).unwrap() {
            ModelSpec::Cnn { train, weeks, .. } => {
                assert_eq!(train.learning_rate, 0.01);
                assert_eq!(weeks, Some(30));
            }
            other => panic!("{other:?}"),
        }
        let mut bad = BTreeMap::new();
        bad.insert("lambda".to_string(), Value::from("x"));
        assert!(ModelSpec::default_for("ridge")
            .unwrap()
            .with_overrides(&bad)
            .is_err());
    }

    #[test]
    fn cnn_layout_slots() {
        let schema = crate::dataio::default_schema(4);
        let l = cnn_layout(&schema, 4).unwrap();
        assert_eq!(l[0], Some(24));
        assert_eq!(l[7], Some(0));
        assert_eq!(l[7 + 4], Some(4));
        let short = cnn_layout(&schema, 3).unwrap();
        assert_eq!(short[7 + 3], None);
    }

    #[test]
    fn subset_columns_predict() {
        let t = small_table();
        let cols: Vec<usize> = (0..t.n_features()).step_by(2).collect();
        let sub = t.select_columns(&cols);
        let spec = ModelSpec::Cnn {
            arch: CnnArchitecture::tiny(),
            weeks: Some(24),
            train: TrainConfig {
                max_epochs: 2,
                ..Default::default()
            },
        };
        let m = fit_model(&spec, &sub, 1).unwrap();
        assert_eq!(m.predict_table(&t).unwrap(), m.predict_table(&sub).unwrap());
        let missing = t.select_columns(&[1, 2]);
        assert!(matches!(
            m.predict_table(&missing),
            Err(Error::MissingColumn(_))
        ));
    }
}
