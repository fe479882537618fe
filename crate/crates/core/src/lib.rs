//! Crop-yield regression benchmark toolkit.
//!
//! Nine regressors (ridge, lasso, linear ε-SVR, KNN, regression tree, random
//! forest, gradient-boosted trees, a dense network and a 1-D convolutional
//! network), temporal hold-out evaluation, cross-validated hyperparameter
//! search, and Shapley-value explanations with Shapley-ranked feature
//! selection.

pub mod bench;
pub mod dataio;
pub mod error;
pub mod explain;
pub mod instkern;
pub mod linmod;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod neural;
pub mod rng;
pub mod trees;
pub mod tuning;

pub use error::{Error, Result};
pub use matrix::Matrix;
