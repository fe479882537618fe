use serde::{Deserialize, Serialize};

use crate::dataio::table::FeatureTable;
use crate::error::{check_dim, Error, Result};
use crate::matrix::Matrix;

/// Per-column z-score statistics. Columns with zero spread are flagged and
/// scale to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub mean: Vec<f64>,
    /// Population standard deviation (divides by n).
    pub std: Vec<f64>,
    pub constant: Vec<bool>,
}

impl ScalerParams {
    pub fn fit(x: &Matrix, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("scaler needs at least one fit row"));
        }
        let d = x.cols();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for &i in rows {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for &i in rows {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let mut std: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).collect();
        let mut constant = vec![false; d];
        for j in 0..d {
            // rounding in the mean leaves ~1 ulp of spread on constant columns
            if std[j] <= 1e-12 * mean[j].abs().max(1.0) {
                std[j] = 0.0;
                constant[j] = true;
            }
        }
        Ok(ScalerParams {
            mean,
            std,
            constant,
        })
    }

    /// Identity transform for `d` columns.
    pub fn identity(d: usize) -> Self {
        ScalerParams {
            mean: vec![0.0; d],
            std: vec![1.0; d],
            constant: vec![false; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn scale_row(&self, row: &[f64], out: &mut [f64]) {
        for j in 0..self.mean.len() {
            out[j] = if self.constant[j] {
                0.0
            } else {
                (row[j] - self.mean[j]) / self.std[j]
            };
        }
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        check_dim(self.dim(), x.cols())?;
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            self.scale_row(x.row(i), out.row_mut(i));
        }
        Ok(out)
    }

    /// Inverse of [`transform`](Self::transform); constant columns come back
    /// as their mean.
    pub fn inverse_transform(&self, z: &Matrix) -> Result<Matrix> {
        check_dim(self.dim(), z.cols())?;
        let mut out = Matrix::zeros(z.rows(), z.cols());
        for i in 0..z.rows() {
            let (src, dst) = (z.row(i), out.row_mut(i));
            for j in 0..self.dim() {
                dst[j] = self.mean[j]
                    + if self.constant[j] {
                        0.0
                    } else {
                        src[j] * self.std[j]
                    };
            }
        }
        Ok(out)
    }
}

/// Statistics from `fit_rows` only; later rows reuse them.
pub fn fit_scaler(table: &FeatureTable, fit_rows: &[usize]) -> Result<ScalerParams> {
    ScalerParams::fit(&table.features, fit_rows)
}

pub fn apply_scaler(table: &FeatureTable, params: &ScalerParams) -> Result<FeatureTable> {
    let mut out = table.clone();
    out.features = params.transform(&table.features)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn train_statistics_reused_on_test_rows() {
        // column values 8, 12 → μ = 10, σ = 2
        let x = Matrix::from_rows(&[[8.0], [12.0], [14.0]]).unwrap();
        let p = ScalerParams::fit(&x, &[0, 1]).unwrap();
        assert_eq!((p.mean[0], p.std[0]), (10.0, 2.0));
        let z = p.transform(&x).unwrap();
        assert_eq!(z.get(2, 0), 2.0);
    }

    #[test]
    fn constant_column_maps_to_zero_and_flags() {
        let x = Matrix::from_rows(&[[0.1, 1.0], [0.1, 2.0], [0.1, 4.0]]).unwrap();
        let p = ScalerParams::fit(&x, &[0, 1, 2]).unwrap();
        assert_eq!(p.constant, vec![true, false]);
        assert_eq!(p.std[0], 0.0);
        let z = p.transform(&x).unwrap();
        assert!(z.column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_fit_rows_rejected() {
        let x = Matrix::zeros(2, 2);
        assert!(ScalerParams::fit(&x, &[]).is_err());
    }

    proptest! {
        #[test]
        fn standardized_columns_have_zero_mean_unit_std(
            data in prop::collection::vec(-1e3f64..1e3, 12..60)
        ) {
            let n = data.len() / 3;
            let x = Matrix::from_vec(n, 3, data[..n * 3].to_vec()).unwrap();
            let rows: Vec<usize> = (0..n).collect();
            let p = ScalerParams::fit(&x, &rows).unwrap();
            let z = p.transform(&x).unwrap();
            for j in 0..3 {
                if p.constant[j] { continue; }
                let col = z.column(j);
                let m = col.iter().sum::<f64>() / n as f64;
                let s = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
                prop_assert!(m.abs() < 1e-12);
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
            let back = p.inverse_transform(&z).unwrap();
            for (a, b) in back.as_slice().iter().zip(x.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }
}
