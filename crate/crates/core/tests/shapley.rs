//! Kernel SHAP against an independent permutation-enumeration oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use yieldbench::explain::{exact_shapley, kernel_shap, KernelShapOptions};
use yieldbench::Matrix;

fn random_matrix(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| r.random_range(-2.0..2.0))
            .collect(),
    )
    .unwrap()
}

/// A smooth model with interactions, so coalitions actually matter.
fn nonlinear(d: usize) -> impl Fn(&Matrix) -> Vec<f64> + Sync {
    move |x: &Matrix| {
        x.iter_rows()
            .map(|r| {
                let mut v = 0.3;
                for j in 0..d {
                    v += (j as f64 + 1.0) * 0.1 * r[j];
                }
                v += r[0] * r[d - 1] + (r[1 % d] * 0.7).sin() * r[d / 2] + r[d / 3].powi(2) * 0.2;
                v
            })
            .collect()
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// φ_j = Σ_S |S|!(d-|S|-1)!/d! [v(S∪{j}) - v(S)], with v(S) averaged over
/// the background, written from the definition.
fn oracle(model: &dyn Fn(&Matrix) -> Vec<f64>, x: &[f64], bg: &Matrix) -> Vec<f64> {
    let d = x.len();
    let v = |mask: usize| -> f64 {
        let rows: Vec<Vec<f64>> = bg
            .iter_rows()
            .map(|b| {
                (0..d)
                    .map(|j| if mask >> j & 1 == 1 { x[j] } else { b[j] })
                    .collect()
            })
            .collect();
        let m = Matrix::from_rows(&rows).unwrap();
        model(&m).iter().sum::<f64>() / bg.rows() as f64
    };
    let values: Vec<f64> = (0..1usize << d).map(v).collect();
    (0..d)
        .map(|j| {
            (0..1usize << d)
                .filter(|s| s >> j & 1 == 0)
                .map(|s| {
                    let k = s.count_ones() as usize;
                    factorial(k) * factorial(d - k - 1) / factorial(d)
                        * (values[s | 1 << j] - values[s])
                })
                .sum()
        })
        .collect()
}

#[test]
fn exact_matches_definition() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    for d in [1, 2, 4, 7] {
        let model = nonlinear(d);
        let bg = random_matrix(9, d, &mut r);
        let x: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
        let a = exact_shapley(&model, &x, &bg).unwrap();
        let want = oracle(&model, &x, &bg);
        for (g, w) in a.phi.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10, "d {d}: {g} vs {w}");
        }
        assert!(a.efficiency_gap() < 1e-8);
    }
}

#[test]
fn full_budget_kernel_matches_exact_up_to_ten_features() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    for d in 1..=10 {
        let model = nonlinear(d);
        let bg = random_matrix(6, d, &mut r);
        for _ in 0..3 {
            let x: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
            let exact = exact_shapley(&model, &x, &bg).unwrap();
            let opts = KernelShapOptions {
                budget: (1 << d).max(d + 2),
                seed: 1,
                regularizer: 0.0,
            };
            let k = kernel_shap(&model, &x, &bg, &opts).unwrap();
            assert!(k.exact);
            let dev = k
                .phi
                .iter()
                .zip(&exact.phi)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(dev < 1e-6, "d {d}: max deviation {dev}");
            assert!(k.efficiency_gap() < 1e-8);
        }
    }
}

#[test]
fn linear_model_attribution_is_closed_form() {
    let mut r = ChaCha8Rng::seed_from_u64(8);
    for d in [3, 6, 10] {
        let w: Vec<f64> = (0..d).map(|_| r.random_range(-3.0..3.0)).collect();
        let b = 1.7;
        let wc = w.clone();
        let model = move |x: &Matrix| -> Vec<f64> {
            x.iter_rows()
                .map(|row| row.iter().zip(&wc).map(|(a, c)| a * c).sum::<f64>() + b)
                .collect()
        };
        let bg = random_matrix(15, d, &mut r);
        let means = bg.column_means();
        let x: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
        let want: Vec<f64> = (0..d).map(|j| w[j] * (x[j] - means[j])).collect();
        let exact = exact_shapley(&model, &x, &bg).unwrap();
        let opts = KernelShapOptions {
            budget: 1 << d,
            seed: 2,
            regularizer: 0.0,
        };
        let kern = kernel_shap(&model, &x, &bg, &opts).unwrap();
        // Sampled coalitions still recover a linear model: every coalition is
        // explained exactly by the true φ.
        let sampled = kernel_shap(
            &model,
            &x,
            &bg,
            &KernelShapOptions {
                budget: 2 * d + 2,
                seed: 3,
                regularizer: 0.0,
            },
        )
        .unwrap();
        for a in [&exact, &kern, &sampled] {
            for (g, w) in a.phi.iter().zip(&want) {
                assert!((g - w).abs() < 1e-6, "d {d}: {g} vs {w}");
            }
            assert!(a.efficiency_gap() < 1e-8);
        }
    }
}

#[test]
fn sampled_error_shrinks_with_budget() {
    let d = 8;
    let model = nonlinear(d);
    let mut r = ChaCha8Rng::seed_from_u64(21);
    let bg = random_matrix(5, d, &mut r);
    let x: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
    let exact = exact_shapley(&model, &x, &bg).unwrap();
    let median_err = |budget: usize| {
        let mut errs: Vec<f64> = (0..20)
            .map(|s| {
                let k = kernel_shap(
                    &model,
                    &x,
                    &bg,
                    &KernelShapOptions {
                        budget,
                        seed: 100 + s,
                        regularizer: 0.0,
                    },
                )
                .unwrap();
                assert!(k.efficiency_gap() < 1e-8);
                k.phi
                    .iter()
                    .zip(&exact.phi)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        (errs[9] + errs[10]) / 2.0
    };
    let e: Vec<f64> = [2 * d, 8 * d, 1 << d]
        .iter()
        .map(|&b| median_err(b))
        .collect();
    assert!(e[0] >= e[1] && e[1] >= e[2], "median errors {e:?}");
    assert!(e[2] < 1e-9);
}

#[test]
fn background_order_does_not_matter() {
    let d = 6;
    let model = nonlinear(d);
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let bg = random_matrix(12, d, &mut r);
    let mut order: Vec<usize> = (0..12).collect();
    order.reverse();
    order.swap(2, 7);
    let shuffled = bg.select_rows(&order);
    let x: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
    let a = exact_shapley(&model, &x, &bg).unwrap();
    let b = exact_shapley(&model, &x, &shuffled).unwrap();
    for (p, q) in a.phi.iter().zip(&b.phi) {
        assert!((p - q).abs() < 1e-12);
    }
    let opts = KernelShapOptions {
        budget: 40,
        seed: 9,
        regularizer: 0.0,
    };
    let a = kernel_shap(&model, &x, &bg, &opts).unwrap();
    let b = kernel_shap(&model, &x, &shuffled, &opts).unwrap();
    for (p, q) in a.phi.iter().zip(&b.phi) {
        assert!((p - q).abs() < 1e-10);
    }
}

#[test]
fn ignored_feature_gets_nothing() {
    let d = 5;
    let model = |x: &Matrix| -> Vec<f64> {
        x.iter_rows()
            .map(|r| r[0] * r[1] + (r[3]).exp() - 2.0 * r[4])
            .collect()
    };
    let mut r = ChaCha8Rng::seed_from_u64(12);
    let bg = random_matrix(10, d, &mut r);
    for _ in 0..5 {
        let x: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
        let a = exact_shapley(&model, &x, &bg).unwrap();
        assert!(a.phi[2].abs() < 1e-8);
    }
}

#[test]
fn budget_below_d_plus_two_is_rejected() {
    let model = nonlinear(4);
    let bg = Matrix::zeros(2, 4);
    let opts = KernelShapOptions {
        budget: 5,
        seed: 0,
        regularizer: 0.0,
    };
    assert!(kernel_shap(&model, &[0.0; 4], &bg, &opts).is_err());
}
