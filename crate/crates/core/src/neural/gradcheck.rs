//! Central-difference verification of [`Network::backward`].

use super::layers::Layer;
use super::network::Network;
use crate::error::{check_dim, Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub n_params: usize,
    /// (parametric layer, index) of the worst entry.
    pub worst: (usize, usize),
    /// Number of bias nudges applied to move ReLU inputs off the kink.
    pub nudges: usize,
}

/// Pre-activations closer than this to zero count as "on the kink".
const KINK_MARGIN: f64 = 1e-3;
/// Gradients smaller than this are compared in absolute terms.
const REL_FLOOR: f64 = 1e-6;

fn batch_loss(net: &Network, x: &Matrix, y: &[f64]) -> f64 {
    x.iter_rows()
        .zip(y)
        .map(|(r, t)| (net.predict_row(r) - t).powi(2))
        .sum::<f64>()
        / y.len() as f64
}

/// Compares the analytic gradient of the batch MSE against central
/// differences for every parameter. Before checking, biases feeding a ReLU
/// are shifted so that no pre-activation in the batch lies within a small
/// margin of zero.
pub fn finite_difference_check(
    net: &Network,
    x: &Matrix,
    y: &[f64],
    eps: f64,
) -> Result<GradCheck> {
    check_dim(net.input_dim(), x.cols())?;
    check_dim(x.rows(), y.len())?;
    if y.is_empty() || !(eps > 0.0) {
        return Err(Error::invalid(
            "gradient check needs samples and a positive step",
        ));
    }
    let mut net = net.clone();
    let nudges = nudge_off_kinks(&mut net, x);

    let mut grads = net.zero_grads();
    let n = y.len() as f64;
    for (r, t) in x.iter_rows().zip(y) {
        let tr = net.forward(r);
        net.backward(&tr, 2.0 * (tr.output() - t) / n, &mut grads);
    }

    let mut out = GradCheck {
        max_rel_error: 0.0,
        n_params: net.n_params(),
        worst: (0, 0),
        nudges,
    };
    for (li, g) in grads.iter().enumerate() {
        for (pi, &analytic) in g.iter().enumerate() {
            let orig = param(&mut net, li)[pi];
            param(&mut net, li)[pi] = orig + eps;
            let up = batch_loss(&net, x, y);
            param(&mut net, li)[pi] = orig - eps;
            let down = batch_loss(&net, x, y);
            param(&mut net, li)[pi] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
            if rel > out.max_rel_error || rel.is_nan() {
                out.max_rel_error = rel;
                out.worst = (li, pi);
            }
        }
    }
    Ok(out)
}

fn param(net: &mut Network, layer: usize) -> &mut Vec<f64> {
    net.params_mut().nth(layer).expect("layer index in range")
}

fn nudge_off_kinks(net: &mut Network, x: &Matrix) -> usize {
    let mut total = 0;
    for _ in 0..50 {
        let mut shifts: Vec<(usize, usize, usize)> = Vec::new();
        for r in x.iter_rows() {
            let tr = net.forward(r);
            let mut pl = 0;
            for (si, stack) in net.stacks.iter().enumerate() {
                for (li, layer) in stack.layers.iter().enumerate() {
                    if layer.params().is_some() {
                        pl += 1;
                    }
                    if !matches!(layer, Layer::Relu) || li == 0 {
                        continue;
                    }
                    let (bias_base, per_unit) = match &stack.layers[li - 1] {
                        Layer::Conv1d { shape, in_len, .. } => {
                            let len = (in_len - shape.kernel) / shape.stride + 1;
                            (shape.n_weights(), len)
                        }
                        Layer::Dense { inputs, units, .. } => (inputs * units, 1),
                        _ => continue,
                    };
                    for pre in tr.stack_inputs(si, li) {
                        for (k, z) in pre.iter().enumerate() {
                            if z.abs() < KINK_MARGIN {
                                shifts.push((pl - 1, bias_base, k / per_unit));
                            }
                        }
                    }
                }
            }
        }
        if shifts.is_empty() {
            break;
        }
        shifts.sort_unstable();
        shifts.dedup();
        for (layer, base, unit) in &shifts {
            param(net, *layer)[base + unit] += 3.0 * KINK_MARGIN;
        }
        total += shifts.len();
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::layers::LayerSpec;
    use crate::neural::network::{build_network, CnnArchitecture, DenseArchitecture, NetworkSpec};
    use rand::Rng as _;

    fn batch(n: usize, d: usize, seed: u64) -> (Matrix, Vec<f64>) {
        let mut r = crate::rng::rng(seed);
        let x = Matrix::from_vec(
            n,
            d,
            (0..n * d).map(|_| r.random_range(-1.5..1.5)).collect(),
        )
        .unwrap();
        let y = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        (x, y)
    }

    #[test]
    fn linear_net_is_exact() {
        let net = build_network(
            &NetworkSpec::dense(DenseArchitecture { hidden: vec![] }, 5),
            1,
        )
        .unwrap();
        let (x, y) = batch(8, 5, 2);
        let c = finite_difference_check(&net, &x, &y, 1e-5).unwrap();
        assert_eq!(c.n_params, 6);
        assert!(c.max_rel_error < 1e-8, "{c:?}");
    }

    #[test]
    fn tiny_cnn_matches() {
        let net = build_network(&NetworkSpec::cnn(CnnArchitecture::tiny(), 12), 3).unwrap();
        assert!(net.n_params() <= 5000);
        let (x, y) = batch(6, net.input_dim(), 4);
        let c = finite_difference_check(&net, &x, &y, 1e-5).unwrap();
        assert!(c.max_rel_error < 1e-4, "{c:?}");
    }

    #[test]
    fn strided_conv_and_pool_match() {
        use LayerSpec::*;
        let arch = CnnArchitecture {
            weather_branch: vec![
                Conv1d {
                    filters: 2,
                    kernel_size: 3,
                    stride: 2,
                },
                Relu,
                Avgpool1d {
                    window: 3,
                    stride: 1,
                },
                Flatten,
            ],
            static_branch: vec![],
            head: vec![Dense { units: 5 }, Relu, Dense { units: 1 }],
        };
        let net = build_network(&NetworkSpec::cnn(arch, 13), 8).unwrap();
        let (x, y) = batch(5, net.input_dim(), 6);
        let c = finite_difference_check(&net, &x, &y, 1e-5).unwrap();
        assert!(c.max_rel_error < 1e-4, "{c:?}");
    }

    #[test]
    fn deep_dense_matches() {
        let net = build_network(
            &NetworkSpec::dense(
                DenseArchitecture {
                    hidden: vec![7, 5, 3],
                },
                4,
            ),
            5,
        )
        .unwrap();
        let (x, y) = batch(10, 4, 7);
        let c = finite_difference_check(&net, &x, &y, 1e-5).unwrap();
        assert!(c.max_rel_error < 1e-4, "{c:?}");
    }
}
