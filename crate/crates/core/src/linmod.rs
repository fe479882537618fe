//! Regularized linear regressors: ridge by a direct symmetric solve and lasso
//! by cyclic coordinate descent.
//!
//! Penalty units differ by solver and match their textbook objectives:
//!
//! * ridge minimises `‖y − Xw − b‖² + λ‖w‖²`, i.e. solves `(XᵀX + λI)w = Xᵀy`
//!   on centered data;
//! * lasso minimises `(1/2n)‖y − Xw − b‖² + λ‖w‖₁`, so all weights vanish for
//!   `λ ≥ max_j |X_jᵀy| / n` on centered data.
//!
//! The intercept is never penalized.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::matrix::{dot, solve_spd, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearKind {
    Ridge,
    Lasso,
    Svr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub kind: LinearKind,
    /// Penalty for ridge/lasso; the `C` trade-off for SVR.
    pub lambda: f64,
    pub weights: Vec<f64>,
    pub intercept: f64,
    #[serde(default = "yes")]
    pub converged: bool,
    #[serde(default)]
    pub iterations: usize,
}

fn yes() -> bool {
    true
}

impl LinearModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.intercept
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        predict_linear(self, x)
    }
}

pub fn predict_linear(model: &LinearModel, x: &Matrix) -> Result<Vec<f64>> {
    check_dim(model.weights.len(), x.cols())?;
    Ok(x.iter_rows().map(|r| model.predict_row(r)).collect())
}

struct Centered {
    x: Matrix,
    y: Vec<f64>,
    x_mean: Vec<f64>,
    y_mean: f64,
}

fn center(x: &Matrix, y: &[f64], fit_intercept: bool) -> Result<Centered> {
    check_dim(x.rows(), y.len())?;
    if x.rows() == 0 {
        return Err(Error::invalid("need at least one training row"));
    }
    if !fit_intercept {
        return Ok(Centered {
            x: x.clone(),
            y: y.to_vec(),
            x_mean: vec![0.0; x.cols()],
            y_mean: 0.0,
        });
    }
    let x_mean = x.column_means();
    let y_mean = y.iter().sum::<f64>() / y.len() as f64;
    let mut xc = x.clone();
    for i in 0..xc.rows() {
        for (v, m) in xc.row_mut(i).iter_mut().zip(&x_mean) {
            *v -= m;
        }
    }
    Ok(Centered {
        x: xc,
        y: y.iter().map(|v| v - y_mean).collect(),
        x_mean,
        y_mean,
    })
}

pub fn fit_ridge(x: &Matrix, y: &[f64], lambda: f64, fit_intercept: bool) -> Result<LinearModel> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid("ridge lambda must be ≥ 0"));
    }
    let c = center(x, y, fit_intercept)?;
    let mut a = c.x.gram();
    for j in 0..a.rows() {
        a.set(j, j, a.get(j, j) + lambda);
    }
    let rhs = c.x.t_matvec(&c.y);
    let weights = solve_spd(&a, &rhs).map_err(|e| match e {
        Error::Singular(_) if lambda == 0.0 => {
            Error::Singular("XᵀX is singular with lambda = 0; use lambda > 0".into())
        }
        other => other,
    })?;
    let intercept = c.y_mean - dot(&weights, &c.x_mean);
    Ok(LinearModel {
        kind: LinearKind::Ridge,
        lambda,
        weights,
        intercept,
        converged: true,
        iterations: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub fit_intercept: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            tol: 1e-8,
            max_iter: 10_000,
            fit_intercept: true,
        }
    }
}

pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent in column order. Stops when the largest
/// coefficient change of a sweep falls below `tol`; running out of sweeps
/// leaves `converged = false`.
pub fn fit_lasso(x: &Matrix, y: &[f64], lambda: f64, opts: LassoOptions) -> Result<LinearModel> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lasso lambda must be ≥ 0"));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("lasso tol must be > 0"));
    }
    let c = center(x, y, opts.fit_intercept)?;
    let (n, d) = (c.x.rows(), c.x.cols());
    let nf = n as f64;
    // column-major copy for the inner loop
    let cols: Vec<Vec<f64>> = (0..d).map(|j| c.x.column(j)).collect();
    let sq: Vec<f64> = cols.iter().map(|col| dot(col, col) / nf).collect();
    let mut w = vec![0.0; d];
    let mut resid = c.y.clone();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut max_delta = 0.0f64;
        for j in 0..d {
            if sq[j] == 0.0 {
                continue;
            }
            let col = &cols[j];
            let rho = dot(col, &resid) / nf + sq[j] * w[j];
            let new = soft_threshold(rho, lambda) / sq[j];
            let delta = new - w[j];
            if delta != 0.0 {
                for (r, v) in resid.iter_mut().zip(col) {
                    *r -= delta * v;
                }
                w[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta < opts.tol {
            converged = true;
            break;
        }
    }
    let intercept = c.y_mean - dot(&w, &c.x_mean);
    Ok(LinearModel {
        kind: LinearKind::Lasso,
        lambda,
        weights: w,
        intercept,
        converged,
        iterations,
    })
}

/// Smallest λ at which every lasso weight is zero.
pub fn lasso_lambda_max(x: &Matrix, y: &[f64], fit_intercept: bool) -> Result<f64> {
    let c = center(x, y, fit_intercept)?;
    let n = c.x.rows() as f64;
    Ok(c.x
        .t_matvec(&c.y)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs() / n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gauss(r: &mut crate::rng::Rng) -> f64 {
        StandardNormal.sample(r)
    }

    fn random_problem(n: usize, d: usize, seed: u64) -> (Matrix, Vec<f64>) {
        let mut r = rng(seed);
        let data: Vec<f64> = (0..n * d).map(|_| gauss(&mut r)).collect();
        let x = Matrix::from_vec(n, d, data).unwrap();
        let w: Vec<f64> = (0..d)
            .map(|j| {
                if j % 3 == 0 {
                    0.0
                } else {
                    j as f64 * 0.5 - 1.0
                }
            })
            .collect();
        let y = x
            .iter_rows()
            .map(|row| dot(row, &w) + 2.0 + 0.3 * gauss(&mut r))
            .collect();
        (x, y)
    }

    #[test]
    fn ridge_one_dimensional_closed_form() {
        let x = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        let m = fit_ridge(&x, &[1.0, 2.0], 1.0, false).unwrap();
        assert!((m.weights[0] - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(m.intercept, 0.0);
    }

    #[test]
    fn ridge_interpolates_exact_line() {
        let x = Matrix::from_rows(&[[1.0], [2.0], [4.0]]).unwrap();
        let m = fit_ridge(&x, &[3.0, 6.0, 12.0], 0.0, true).unwrap();
        assert!((m.weights[0] - 3.0).abs() < 1e-12);
        assert!(m.intercept.abs() < 1e-12);
    }

    #[test]
    fn ridge_huge_penalty_shrinks_to_zero() {
        let (x, y) = random_problem(40, 5, 1);
        let m = fit_ridge(&x, &y, 1e12, true).unwrap();
        assert!(m.weights.iter().all(|w| w.abs() < 1e-6));
    }

    #[test]
    fn ridge_singular_without_penalty_errors() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]).unwrap();
        let err = fit_ridge(&x, &[1.0, 2.0, 3.0], 0.0, true).unwrap_err();
        assert!(err.to_string().contains("lambda > 0"), "{err}");
        assert!(fit_ridge(&x, &[1.0, 2.0, 3.0], 0.1, true).is_ok());
    }

    #[test]
    fn ridge_satisfies_normal_equations() {
        let (x, y) = random_problem(50, 8, 2);
        let lambda = 3.0;
        let m = fit_ridge(&x, &y, lambda, false).unwrap();
        let g = x.gram();
        let lhs: Vec<f64> = (0..8)
            .map(|i| {
                (0..8).map(|j| g.get(i, j) * m.weights[j]).sum::<f64>() + lambda * m.weights[i]
            })
            .collect();
        let rhs = x.t_matvec(&y);
        let res: f64 = lhs
            .iter()
            .zip(&rhs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(res < 1e-10, "{res}");
    }

    #[test]
    fn lasso_soft_threshold_single_feature() {
        let x = Matrix::from_rows(&[[-1.0], [1.0]]).unwrap();
        let m = fit_lasso(&x, &[-2.0, 2.0], 0.5, LassoOptions::default()).unwrap();
        assert!((m.weights[0] - 1.5).abs() < 1e-12);
        assert!(m.converged);
    }

    #[test]
    fn lasso_zero_at_lambda_max() {
        let (x, y) = random_problem(60, 6, 3);
        let lmax = lasso_lambda_max(&x, &y, true).unwrap();
        let m = fit_lasso(&x, &y, lmax, LassoOptions::default()).unwrap();
        assert!(m.weights.iter().all(|&w| w == 0.0));
        let m = fit_lasso(&x, &y, lmax * 0.9, LassoOptions::default()).unwrap();
        assert!(m.weights.iter().any(|&w| w != 0.0));
    }

    #[test]
    fn lasso_without_penalty_is_least_squares() {
        let (x, y) = random_problem(80, 5, 4);
        let opts = LassoOptions {
            tol: 1e-13,
            ..Default::default()
        };
        let l = fit_lasso(&x, &y, 0.0, opts).unwrap();
        let r = fit_ridge(&x, &y, 0.0, true).unwrap();
        for (a, b) in l.weights.iter().zip(&r.weights) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert!((l.intercept - r.intercept).abs() < 1e-8);
    }

    #[test]
    fn lasso_reports_non_convergence() {
        let (x, y) = random_problem(30, 6, 5);
        let m = fit_lasso(
            &x,
            &y,
            0.01,
            LassoOptions {
                tol: 1e-15,
                max_iter: 2,
                fit_intercept: true,
            },
        )
        .unwrap();
        assert!(!m.converged);
        assert_eq!(m.iterations, 2);
    }

    #[test]
    fn lasso_sparsity_monotone_in_lambda() {
        let (x, y) = random_problem(60, 10, 6);
        let lmax = lasso_lambda_max(&x, &y, true).unwrap();
        let mut prev = usize::MAX;
        for k in 0..=20 {
            let lambda = lmax * k as f64 / 20.0;
            let m = fit_lasso(&x, &y, lambda, LassoOptions::default()).unwrap();
            let nnz = m.weights.iter().filter(|w| **w != 0.0).count();
            assert!(nnz <= prev, "λ={lambda}: {nnz} > {prev}");
            prev = nnz;
        }
    }

    #[test]
    fn predict_linear_cases() {
        let m = LinearModel {
            kind: LinearKind::Ridge,
            lambda: 0.0,
            weights: vec![2.0, -1.0],
            intercept: 1.0,
            converged: true,
            iterations: 0,
        };
        let x = Matrix::from_rows(&[[3.0, 4.0]]).unwrap();
        assert_eq!(predict_linear(&m, &x).unwrap(), vec![3.0]);
        assert!(predict_linear(&m, &Matrix::zeros(1, 3)).is_err());
        let c = LinearModel {
            weights: vec![0.0, 0.0],
            intercept: 4.2,
            ..m.clone()
        };
        assert_eq!(
            predict_linear(&c, &Matrix::zeros(2, 2)).unwrap(),
            vec![4.2, 4.2]
        );
        let id = LinearModel {
            weights: vec![1.0],
            intercept: 0.0,
            ..m
        };
        assert_eq!(
            predict_linear(&id, &Matrix::from_rows(&[[7.0]]).unwrap()).unwrap(),
            vec![7.0]
        );
    }
}
