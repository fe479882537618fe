//! Mini-batch Adam on mean squared error.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{Grads, Network};
use crate::error::{check_dim, Error, Result};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            max_epochs: 200,
            patience: 20,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::invalid("validation_fraction must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("Adam epsilon must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// A network plus the target standardization it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedNetwork {
    pub network: Network,
    pub target_mean: f64,
    pub target_scale: f64,
    pub history: Vec<EpochRecord>,
    /// Epoch whose weights were kept (1-based; 0 if untrained).
    pub best_epoch: usize,
}

impl TrainedNetwork {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.target_mean + self.target_scale * self.network.predict_row(x)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        check_dim(self.network.input_dim(), x.cols())?;
        Ok(x.iter_rows().map(|r| self.predict_row(r)).collect())
    }
}

struct Adam {
    m: Grads,
    v: Grads,
    t: i32,
}

impl Adam {
    fn step(&mut self, net: &mut Network, g: &Grads, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (((p, g), m), v) in net.params_mut().zip(g).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                p[i] -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.epsilon);
            }
        }
    }
}

fn mse(net: &Network, x: &Matrix, y: &[f64], idx: &[usize]) -> f64 {
    let s: f64 = idx
        .iter()
        .map(|&i| (net.predict_row(x.row(i)) - y[i]).powi(2))
        .sum();
    s / idx.len().max(1) as f64
}

/// Trains on rows of `x` (already scaled, laid out as `net.input_dim()`
/// columns). Targets are standardized internally.
pub fn train_network(
    mut net: Network,
    x: &Matrix,
    y: &[f64],
    cfg: &TrainConfig,
) -> Result<TrainedNetwork> {
    cfg.validate()?;
    check_dim(net.input_dim(), x.cols())?;
    check_dim(x.rows(), y.len())?;
    if y.is_empty() {
        return Err(Error::invalid("cannot train on an empty table"));
    }
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let scale = if var.sqrt() > 1e-12 * mean.abs().max(1.0) {
        var.sqrt()
    } else {
        1.0
    };
    let ys: Vec<f64> = y.iter().map(|v| (v - mean) / scale).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng(derive_seed(cfg.seed, 0)));
    let n_val = if cfg.validation_fraction > 0.0 && n >= 2 {
        ((cfg.validation_fraction * n as f64).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let (val, train) = order.split_at(n_val);
    let mut train = train.to_vec();

    let mut adam = Adam {
        m: net.zero_grads(),
        v: net.zero_grads(),
        t: 0,
    };
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, net.clone());
    for epoch in 1..=cfg.max_epochs {
        train.shuffle(&mut rng(derive_seed(cfg.seed, epoch as u64)));
        let mut total = 0.0;
        for batch in train.chunks(cfg.batch_size) {
            let mut g = net.zero_grads();
            let scale_b = 2.0 / batch.len() as f64;
            for &i in batch {
                let tr = net.forward(x.row(i));
                let err = tr.output() - ys[i];
                total += err * err;
                net.backward(&tr, scale_b * err, &mut g);
            }
            if !total.is_finite() {
                return Err(Error::Diverged { epoch, loss: total });
            }
            adam.step(&mut net, &g, cfg);
        }
        let train_loss = total / train.len() as f64;
        let val_loss = (!val.is_empty()).then(|| mse(&net, x, &ys, val));
        if let Some(v) = val_loss.filter(|v| !v.is_finite()) {
            return Err(Error::Diverged { epoch, loss: v });
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        let monitored = val_loss.unwrap_or(train_loss);
        if monitored < best.0 {
            best = (monitored, epoch, net.clone());
        } else if cfg.patience > 0 && epoch - best.1 >= cfg.patience {
            break;
        }
    }
    let (network, best_epoch) = if best.1 == 0 {
        (net, 0)
    } else {
        (best.2, best.1)
    };
    Ok(TrainedNetwork {
        network,
        target_mean: mean,
        target_scale: scale,
        history,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::network::{build_network, CnnArchitecture, DenseArchitecture, NetworkSpec};

    fn linear_data(n: usize, d: usize, seed: u64) -> (Matrix, Vec<f64>) {
        use rand::Rng as _;
        let mut r = rng(seed);
        let x = Matrix::from_vec(
            n,
            d,
            (0..n * d).map(|_| r.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let y = x
            .iter_rows()
            .map(|row| {
                1.0 + row
                    .iter()
                    .enumerate()
                    .map(|(j, v)| (j as f64 - 1.0) * v)
                    .sum::<f64>()
            })
            .collect();
        (x, y)
    }

    #[test]
    fn zero_epochs_keeps_weights() {
        let net = build_network(&NetworkSpec::dense(DenseArchitecture::default(), 3), 5).unwrap();
        let (x, y) = linear_data(20, 3, 1);
        let cfg = TrainConfig {
            max_epochs: 0,
            ..Default::default()
        };
        let t = train_network(net.clone(), &x, &y, &cfg).unwrap();
        assert_eq!(t.network, net);
        assert!(t.history.is_empty());
    }

    #[test]
    fn constant_target_is_learned() {
        let net = build_network(
            &NetworkSpec::dense(DenseArchitecture { hidden: vec![8] }, 3),
            2,
        )
        .unwrap();
        let (x, _) = linear_data(40, 3, 2);
        let y = vec![4.25; 40];
        let cfg = TrainConfig {
            max_epochs: 12000,
            batch_size: 40,
            patience: 0,
            validation_fraction: 0.0,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let t = train_network(net, &x, &y, &cfg).unwrap();
        let worst = t
            .predict(&x)
            .unwrap()
            .iter()
            .map(|p| (p - 4.25).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-2, "{worst}");
    }

    #[test]
    fn history_is_deterministic() {
        let spec = NetworkSpec::cnn(CnnArchitecture::tiny(), 12);
        let (x, y) = linear_data(50, spec.input_dim(), 3);
        let cfg = TrainConfig {
            max_epochs: 5,
            seed: 11,
            ..Default::default()
        };
        let a = train_network(build_network(&spec, 1).unwrap(), &x, &y, &cfg).unwrap();
        let b = train_network(build_network(&spec, 1).unwrap(), &x, &y, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.network, b.network);
    }

    #[test]
    fn noiseless_linear_fit() {
        let (x, y) = linear_data(300, 4, 4);
        let net = build_network(&NetworkSpec::dense(DenseArchitecture::default(), 4), 7).unwrap();
        let t = train_network(net, &x, &y, &TrainConfig::default()).unwrap();
        let best = t
            .history
            .iter()
            .map(|h| h.train_loss)
            .fold(f64::INFINITY, f64::min);
        assert!(best < 1e-3, "best train loss {best}");
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let (x, mut y) = linear_data(64, 3, 5);
        y.iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v *= if i % 2 == 0 { 1e150 } else { -1e150 });
        let net = build_network(
            &NetworkSpec::dense(DenseArchitecture { hidden: vec![4] }, 3),
            1,
        )
        .unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e300,
            max_epochs: 50,
            ..Default::default()
        };
        assert!(matches!(
            train_network(net, &x, &y, &cfg),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn rejects_bad_config() {
        let net = build_network(&NetworkSpec::dense(DenseArchitecture::default(), 3), 5).unwrap();
        let (x, y) = linear_data(10, 3, 1);
        for cfg in [
            TrainConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            TrainConfig {
                validation_fraction: 1.0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
        ] {
            assert!(train_network(net.clone(), &x, &y, &cfg).is_err());
        }
    }
}
