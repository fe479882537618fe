//! K-nearest-neighbour regression and linear ε-insensitive SVR.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{check_dim, Error, Result};
use crate::linmod::{LinearKind, LinearModel};
use crate::matrix::{dot, Matrix};

pub fn euclidean_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    check_dim(p.len(), q.len())?;
    Ok(squared_distance(p, q).sqrt())
}

fn squared_distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (b - a) * (b - a)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    x: Matrix,
    y: Vec<f64>,
    k: usize,
}

impl KnnModel {
    pub fn fit(x: &Matrix, y: &[f64], k: usize) -> Result<Self> {
        check_dim(x.rows(), y.len())?;
        if k == 0 || k > x.rows() {
            return Err(Error::invalid(format!(
                "k must be in 1..={} (got {k})",
                x.rows()
            )));
        }
        Ok(KnnModel {
            x: x.clone(),
            y: y.to_vec(),
            k,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    /// Unweighted mean of the `k` nearest targets; equal distances go to the
    /// lower training index.
    pub fn predict_row(&self, q: &[f64]) -> f64 {
        let mut d: Vec<(f64, usize)> = self
            .x
            .iter_rows()
            .enumerate()
            .map(|(i, r)| (squared_distance(r, q), i))
            .collect();
        let k = self.k;
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, cmp);
        }
        d[..k].iter().map(|&(_, i)| self.y[i]).sum::<f64>() / k as f64
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        check_dim(self.x.cols(), x.cols())?;
        Ok(x.iter_rows().map(|r| self.predict_row(r)).collect())
    }
}

pub fn predict_knn(model: &KnnModel, x: &[f64]) -> Result<f64> {
    check_dim(model.n_features(), x.len())?;
    Ok(model.predict_row(x))
}

/// On-disk form: the training matrix as a base64 blob of little-endian f64.
#[derive(Serialize, Deserialize)]
struct KnnRepr {
    k: usize,
    rows: usize,
    cols: usize,
    x_f64le: String,
    y: Vec<f64>,
}

impl Serialize for KnnModel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let bytes: Vec<u8> = self
            .x
            .as_slice()
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        KnnRepr {
            k: self.k,
            rows: self.x.rows(),
            cols: self.x.cols(),
            x_f64le: B64.encode(bytes),
            y: self.y.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for KnnModel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = KnnRepr::deserialize(d)?;
        let bytes = B64.decode(&r.x_f64le).map_err(D::Error::custom)?;
        if bytes.len() != r.rows * r.cols * 8 {
            return Err(D::Error::custom("knn blob length does not match its shape"));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let x = Matrix::from_vec(r.rows, r.cols, data).map_err(D::Error::custom)?;
        KnnModel::fit(&x, &r.y, r.k).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvrParams {
    /// Trade-off between margin and tube violations; must be positive.
    pub c: f64,
    /// Tube half-width.
    pub epsilon: f64,
    /// Initial step; step `t` is `step_size / √(t + 1)` along the normalized subgradient.
    pub step_size: f64,
    pub iterations: usize,
}

impl Default for SvrParams {
    fn default() -> Self {
        SvrParams {
            c: 1.0,
            epsilon: 0.1,
            step_size: 0.5,
            iterations: 5_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrFit {
    pub model: LinearModel,
    pub objective: f64,
    /// Best objective so far, sampled every 100 iterations (non-increasing).
    pub objective_trace: Vec<f64>,
}

pub fn svr_objective(x: &Matrix, y: &[f64], w: &[f64], b: f64, params: &SvrParams) -> f64 {
    let loss: f64 = x
        .iter_rows()
        .zip(y)
        .map(|(r, yi)| ((yi - dot(w, r) - b).abs() - params.epsilon).max(0.0))
        .sum();
    0.5 * dot(w, w) + params.c * loss
}

/// Minimises `½‖w‖² + C·Σ max(0, |yᵢ − wᵀxᵢ − b| − ε)` by full-batch
/// normalized subgradient descent from `w = 0, b = mean(y)`, returning the
/// best iterate seen. Residuals exactly on the tube boundary contribute a
/// zero subgradient.
pub fn fit_svr(x: &Matrix, y: &[f64], params: &SvrParams) -> Result<SvrFit> {
    check_dim(x.rows(), y.len())?;
    if !(params.c > 0.0) {
        return Err(Error::invalid("SVR requires C > 0"));
    }
    if !(params.epsilon >= 0.0) {
        return Err(Error::invalid("SVR epsilon must be ≥ 0"));
    }
    if !(params.step_size > 0.0) {
        return Err(Error::invalid("SVR step size must be > 0"));
    }
    if x.rows() == 0 {
        return Err(Error::invalid("need at least one training row"));
    }
    let d = x.cols();
    let mut w = vec![0.0; d];
    let mut b = y.iter().sum::<f64>() / y.len() as f64;
    let mut best = (svr_objective(x, y, &w, b, params), w.clone(), b);
    let mut trace = vec![best.0];
    let mut gw = vec![0.0; d];
    for t in 0..params.iterations {
        gw.copy_from_slice(&w);
        let mut gb = 0.0;
        for (r, yi) in x.iter_rows().zip(y) {
            let resid = yi - dot(&w, r) - b;
            if resid.abs() > params.epsilon {
                let s = params.c * resid.signum();
                for (g, v) in gw.iter_mut().zip(r) {
                    *g -= s * v;
                }
                gb -= s;
            }
        }
        let norm = (dot(&gw, &gw) + gb * gb).sqrt();
        if norm == 0.0 {
            break;
        }
        let eta = params.step_size / ((t + 1) as f64).sqrt() / norm;
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= eta * g;
        }
        b -= eta * gb;
        let obj = svr_objective(x, y, &w, b, params);
        if obj < best.0 {
            best = (obj, w.clone(), b);
        }
        if (t + 1) % 100 == 0 {
            trace.push(best.0);
        }
    }
    let (objective, weights, intercept) = best;
    Ok(SvrFit {
        model: LinearModel {
            kind: LinearKind::Svr,
            lambda: params.c,
            weights,
            intercept,
            converged: true,
            iterations: params.iterations,
        },
        objective,
        objective_trace: trace,
    })
}
