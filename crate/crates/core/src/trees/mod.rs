//! CART regression trees, bagged random forests and gradient-boosted trees.
//!
//! The boosted ensemble is plain second-order gradient boosting for squared
//! loss (unit curvature) with an L2 penalty on leaf weights. It has no column
//! sampling and no gain-threshold pruning.

mod cart;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cart::{SplitChoice, Tree, TreeNode};

use crate::error::{check_dim, Error, Result};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, rng};
use cart::{grow, GrowParams, LeafRule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub min_node_size: usize,
    /// `None` grows until the other stopping rules fire.
    pub max_depth: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            min_node_size: 5,
            max_depth: None,
        }
    }
}

/// Grows one tree on all rows. A node stays a leaf when it cannot be split
/// into two children of at least `min_node_size` rows, when its targets are
/// all equal, or at `max_depth`. Thresholds are midpoints between adjacent
/// distinct sorted values; ties in child SSE keep the lower feature index,
/// then the lower threshold.
pub fn fit_regression_tree(x: &Matrix, y: &[f64], params: &TreeParams) -> Result<Tree> {
    check_dim(x.rows(), y.len())?;
    if x.rows() == 0 {
        return Err(Error::invalid("need at least one training row"));
    }
    let rows: Vec<usize> = (0..x.rows()).collect();
    let gp = GrowParams {
        min_node_size: params.min_node_size,
        max_depth: params.max_depth,
        features_per_split: None,
        leaf: LeafRule::Mean,
    };
    Ok(grow(x, y, &rows, &gp, &mut rng(0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleMode {
    Single,
    Bagged,
    Boosted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub mode: EnsembleMode,
    pub n_features: usize,
    pub trees: Vec<Tree>,
    /// Boosting initial prediction; 0 for other modes.
    #[serde(default)]
    pub base_score: f64,
    #[serde(default = "one")]
    pub learning_rate: f64,
    #[serde(default)]
    pub tree_seeds: Vec<u64>,
    /// Boosting: training MSE after each stage, starting with the base score.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub train_mse: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

impl EnsembleModel {
    pub fn single(tree: Tree, n_features: usize) -> Self {
        EnsembleModel {
            mode: EnsembleMode::Single,
            n_features,
            trees: vec![tree],
            base_score: 0.0,
            learning_rate: 1.0,
            tree_seeds: Vec::new(),
            train_mse: Vec::new(),
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match self.mode {
            EnsembleMode::Single => self.trees[0].predict_row(x),
            EnsembleMode::Bagged => {
                self.trees.iter().map(|t| t.predict_row(x)).sum::<f64>() / self.trees.len() as f64
            }
            EnsembleMode::Boosted => {
                self.base_score
                    + self.learning_rate * self.trees.iter().map(|t| t.predict_row(x)).sum::<f64>()
            }
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        predict_ensemble(self, x)
    }
}

pub fn predict_ensemble(model: &EnsembleModel, x: &Matrix) -> Result<Vec<f64>> {
    check_dim(model.n_features, x.cols())?;
    if model.mode != EnsembleMode::Boosted && model.trees.is_empty() {
        return Err(Error::invalid("ensemble has no trees"));
    }
    Ok(x.iter_rows().map(|r| model.predict_row(r)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub min_node_size: usize,
    pub max_depth: Option<usize>,
    /// Share of features examined at each split (`⌈f·d⌉`).
    pub feature_fraction: f64,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            min_node_size: 5,
            max_depth: None,
            feature_fraction: 1.0 / 3.0,
            bootstrap: true,
            seed: 0,
        }
    }
}

/// Trees are fitted in parallel; tree `t` draws its bootstrap sample and
/// split features from `derive_seed(seed, t)`, so the result does not depend
/// on scheduling.
pub fn fit_random_forest(x: &Matrix, y: &[f64], params: &ForestParams) -> Result<EnsembleModel> {
    check_dim(x.rows(), y.len())?;
    if params.n_trees == 0 {
        return Err(Error::invalid("forest needs at least one tree"));
    }
    if !(params.feature_fraction > 0.0 && params.feature_fraction <= 1.0) {
        return Err(Error::invalid("feature_fraction must be in (0, 1]"));
    }
    let n = x.rows();
    if n == 0 {
        return Err(Error::invalid("need at least one training row"));
    }
    let d = x.cols();
    let per_split = ((params.feature_fraction * d as f64).ceil() as usize).clamp(1, d.max(1));
    let seeds: Vec<u64> = (0..params.n_trees as u64)
        .map(|t| derive_seed(params.seed, t))
        .collect();
    let trees: Vec<Tree> = seeds
        .par_iter()
        .map(|&s| {
            let mut r = rng(s);
            let rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| r.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let gp = GrowParams {
                min_node_size: params.min_node_size,
                max_depth: params.max_depth,
                features_per_split: Some(per_split),
                leaf: LeafRule::Mean,
            };
            grow(x, y, &rows, &gp, &mut r)
        })
        .collect();
    Ok(EnsembleModel {
        mode: EnsembleMode::Bagged,
        n_features: d,
        trees,
        base_score: 0.0,
        learning_rate: 1.0,
        tree_seeds: seeds,
        train_mse: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: Option<usize>,
    pub min_node_size: usize,
    /// L2 penalty λ on leaf weights.
    pub leaf_l2: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            n_trees: 200,
            learning_rate: 0.05,
            max_depth: Some(4),
            min_node_size: 5,
            leaf_l2: 1.0,
        }
    }
}

/// Stage `m` fits a tree to the current residuals with leaf weight
/// `Σr / (count + λ)` and adds `ν · tree` to the prediction.
pub fn fit_gbt(x: &Matrix, y: &[f64], params: &GbtParams) -> Result<EnsembleModel> {
    check_dim(x.rows(), y.len())?;
    let n = x.rows();
    if n == 0 {
        return Err(Error::invalid("need at least one training row"));
    }
    if !(params.learning_rate > 0.0 && params.learning_rate <= 1.0) {
        return Err(Error::invalid("learning rate must be in (0, 1]"));
    }
    if !(params.leaf_l2 >= 0.0) {
        return Err(Error::invalid("leaf_l2 must be ≥ 0"));
    }
    let base = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base; n];
    let mse = |p: &[f64]| p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64;
    let mut history = vec![mse(&pred)];
    let rows: Vec<usize> = (0..n).collect();
    let gp = GrowParams {
        min_node_size: params.min_node_size,
        max_depth: params.max_depth,
        features_per_split: None,
        leaf: LeafRule::Shrunk(params.leaf_l2),
    };
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut resid = vec![0.0; n];
    let mut dummy = rng(0);
    for _ in 0..params.n_trees {
        for i in 0..n {
            resid[i] = y[i] - pred[i];
        }
        let tree = grow(x, &resid, &rows, &gp, &mut dummy);
        for (i, p) in pred.iter_mut().enumerate() {
            *p += params.learning_rate * tree.predict_row(x.row(i));
        }
        history.push(mse(&pred));
        trees.push(tree);
    }
    Ok(EnsembleModel {
        mode: EnsembleMode::Boosted,
        n_features: x.cols(),
        trees,
        base_score: base,
        learning_rate: params.learning_rate,
        tree_seeds: Vec::new(),
        train_mse: history,
    })
}
