//! Ridge, lasso and CART checked against independent reference solvers.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use yieldbench::linmod::{fit_lasso, fit_ridge, lasso_lambda_max, LassoOptions};
use yieldbench::trees::{fit_regression_tree, Tree, TreeParams};
use yieldbench::Matrix;

fn normal(r: &mut ChaCha8Rng) -> f64 {
    // Box-Muller keeps the oracle free of the crate's own samplers.
    let u: f64 = r.random_range(f64::EPSILON..1.0);
    let v: f64 = r.random();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

fn problem(n: usize, d: usize, seed: u64) -> (Matrix, Vec<f64>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n * d).map(|_| normal(&mut r) * 2.0 + 1.0).collect();
    let w: Vec<f64> = (0..d)
        .map(|j| if j % 3 == 0 { 0.0 } else { normal(&mut r) })
        .collect();
    let y = (0..n)
        .map(|i| (0..d).map(|j| x[i * d + j] * w[j]).sum::<f64>() + 3.0 + 0.5 * normal(&mut r))
        .collect();
    (Matrix::from_vec(n, d, x).unwrap(), y)
}

/// Gauss-Jordan with partial pivoting on a dense copy.
fn gauss_jordan(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    (0..n).map(|i| b[i] / a[i][i]).collect()
}

#[test]
fn ridge_matches_normal_equations() {
    for (seed, lambda) in [(1, 0.0), (2, 0.5), (3, 10.0), (4, 250.0)] {
        let (n, d) = (80, 6);
        let (x, y) = problem(n, d, seed);
        let xm: Vec<f64> = (0..d)
            .map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64)
            .collect();
        let ym = y.iter().sum::<f64>() / n as f64;
        let mut a = vec![vec![0.0; d]; d];
        let mut b = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                b[j] += (x.get(i, j) - xm[j]) * (y[i] - ym);
                for k in 0..d {
                    a[j][k] += (x.get(i, j) - xm[j]) * (x.get(i, k) - xm[k]);
                }
            }
        }
        for (j, row) in a.iter_mut().enumerate() {
            row[j] += lambda;
        }
        let w = gauss_jordan(a, b);
        let b0 = ym - w.iter().zip(&xm).map(|(w, m)| w * m).sum::<f64>();

        let m = fit_ridge(&x, &y, lambda, true).unwrap();
        for (got, want) in m.weights.iter().zip(&w) {
            assert!((got - want).abs() < 1e-8, "seed {seed}: {got} vs {want}");
        }
        assert!((m.intercept - b0).abs() < 1e-8);
    }
}

fn lasso_gradient(x: &Matrix, y: &[f64], w: &[f64], b: f64) -> Vec<f64> {
    let n = x.rows();
    let r: Vec<f64> = (0..n)
        .map(|i| y[i] - b - x.row(i).iter().zip(w).map(|(a, c)| a * c).sum::<f64>())
        .collect();
    (0..x.cols())
        .map(|j| (0..n).map(|i| x.get(i, j) * r[i]).sum::<f64>() / n as f64)
        .collect()
}

#[test]
fn lasso_satisfies_kkt() {
    for seed in 0..12u64 {
        let (x, y) = problem(60, 8, 100 + seed);
        let lmax = lasso_lambda_max(&x, &y, true).unwrap();
        let opts = LassoOptions {
            tol: 1e-9,
            ..Default::default()
        };
        for frac in [0.01, 0.1, 0.3, 0.7] {
            let lambda = frac * lmax;
            let m = fit_lasso(&x, &y, lambda, opts).unwrap();
            assert!(m.converged);
            let g = lasso_gradient(&x, &y, &m.weights, m.intercept);
            let slack = 10.0 * opts.tol;
            for (j, (&w, &gj)) in m.weights.iter().zip(&g).enumerate() {
                if w == 0.0 {
                    assert!(
                        gj.abs() <= lambda + slack,
                        "seed {seed} j {j}: |g| {} > λ {lambda}",
                        gj.abs()
                    );
                } else {
                    assert!(
                        (gj - lambda * w.signum()).abs() <= slack,
                        "seed {seed} j {j}: g {gj} w {w}"
                    );
                }
            }
        }
    }
}

#[test]
fn lasso_is_empty_from_lambda_max() {
    for seed in 0..8u64 {
        let (x, y) = problem(50, 5, 200 + seed);
        let lmax = lasso_lambda_max(&x, &y, true).unwrap();
        for lambda in [lmax, lmax * 1.0001, lmax * 3.0] {
            let m = fit_lasso(&x, &y, lambda, LassoOptions::default()).unwrap();
            assert!(
                m.weights.iter().all(|&w| w == 0.0),
                "seed {seed}: {:?}",
                m.weights
            );
        }
        let m = fit_lasso(&x, &y, lmax * 0.95, LassoOptions::default()).unwrap();
        assert!(m.weights.iter().any(|&w| w != 0.0));
    }
}

fn sse(rows: &[usize], y: &[f64]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let m = rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64;
    rows.iter().map(|&i| (y[i] - m).powi(2)).sum()
}

/// Every split any threshold between distinct values could make, scored
/// from scratch: O(n) per candidate, O(n²d) per node.
fn brute_best(x: &Matrix, y: &[f64], rows: &[usize], min_node: usize) -> Option<f64> {
    let mut best: Option<f64> = None;
    for f in 0..x.cols() {
        let mut vals: Vec<f64> = rows.iter().map(|&i| x.get(i, f)).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x.get(i, f) <= t);
            if l.len() < min_node || r.len() < min_node {
                continue;
            }
            let s = sse(&l, y) + sse(&r, y);
            if best.is_none_or(|b| s < b) {
                best = Some(s);
            }
        }
    }
    best
}

fn check_node(
    tree: &Tree,
    node: usize,
    x: &Matrix,
    y: &[f64],
    rows: &[usize],
    p: &TreeParams,
    case: u64,
) {
    let n = &tree.nodes[node];
    let oracle = brute_best(x, y, rows, p.min_node_size.max(1));
    let tol = |s: f64| 1e-9 * s.abs().max(1.0);
    match n.feature {
        None => {
            let pure = rows.iter().all(|&i| y[i] == y[rows[0]]);
            assert!(
                pure || oracle.is_none(),
                "case {case}: leaf with a valid split of {} rows",
                rows.len()
            );
        }
        Some(f) => {
            let (l, r): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|&&i| x.get(i, f) <= n.threshold);
            let got = sse(&l, y) + sse(&r, y);
            let want = oracle.expect("split where the oracle finds none");
            assert!(
                (got - want).abs() <= tol(want),
                "case {case}: split sse {got} vs oracle {want}"
            );
            assert!(l.len() >= p.min_node_size && r.len() >= p.min_node_size);
            check_node(tree, n.left, x, y, &l, p, case);
            check_node(tree, n.right, x, y, &r, p, case);
        }
    }
}

#[test]
fn tree_splits_match_brute_force() {
    for case in 0..200u64 {
        let mut r = ChaCha8Rng::seed_from_u64(9000 + case);
        let n = r.random_range(2..=50);
        let d = r.random_range(1..=3);
        // Coarse grids on some cases to force tied values.
        let levels = if case % 3 == 0 {
            Some(r.random_range(2..6))
        } else {
            None
        };
        let x: Vec<f64> = (0..n * d)
            .map(|_| match levels {
                Some(k) => r.random_range(0..k) as f64,
                None => normal(&mut r),
            })
            .collect();
        let x = Matrix::from_vec(n, d, x).unwrap();
        let y: Vec<f64> = (0..n)
            .map(|i| x.get(i, 0).sin() * 2.0 + normal(&mut r) * 0.3 + i as f64 % 3.0)
            .collect();
        let p = TreeParams {
            min_node_size: r.random_range(1..=4),
            max_depth: if case % 2 == 0 {
                None
            } else {
                Some(r.random_range(1..=4))
            },
        };
        let tree = fit_regression_tree(&x, &y, &p).unwrap();
        assert!(tree.is_well_formed());
        let rows: Vec<usize> = (0..n).collect();
        if p.max_depth.is_none() {
            check_node(&tree, 0, &x, &y, &rows, &p, case);
        } else {
            // Depth-capped leaves may still have splits; check only internal nodes.
            check_internal(&tree, 0, &x, &y, &rows, &p, case);
        }
    }
}

fn check_internal(
    tree: &Tree,
    node: usize,
    x: &Matrix,
    y: &[f64],
    rows: &[usize],
    p: &TreeParams,
    case: u64,
) {
    let n = &tree.nodes[node];
    if let Some(f) = n.feature {
        let (l, r): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&i| x.get(i, f) <= n.threshold);
        let got = sse(&l, y) + sse(&r, y);
        let want = brute_best(x, y, rows, p.min_node_size.max(1))
            .expect("split where the oracle finds none");
        assert!(
            (got - want).abs() <= 1e-9 * want.abs().max(1.0),
            "case {case}: {got} vs {want}"
        );
        check_internal(tree, n.left, x, y, &l, p, case);
        check_internal(tree, n.right, x, y, &r, p, case);
    }
}
