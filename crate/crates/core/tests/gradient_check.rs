use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use yieldbench::neural::{
    build_network, finite_difference_check, CnnArchitecture, DenseArchitecture, NetworkSpec,
};
use yieldbench::Matrix;

fn batch(n: usize, d: usize, seed: u64) -> (Matrix, Vec<f64>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::from_vec(
        n,
        d,
        (0..n * d).map(|_| r.random_range(-1.5..1.5)).collect(),
    )
    .unwrap();
    (x, (0..n).map(|_| r.random_range(-1.0..1.0)).collect())
}

#[test]
fn tiny_cnn_passes_central_differences() {
    let t0 = Instant::now();
    for (weeks, seed) in [(12, 1), (16, 2), (9, 3)] {
        let net = build_network(&NetworkSpec::cnn(CnnArchitecture::tiny(), weeks), seed).unwrap();
        assert!(net.n_params() <= 5000, "{} params", net.n_params());
        let (x, y) = batch(8, net.input_dim(), 10 + seed);
        let c = finite_difference_check(&net, &x, &y, 1e-5).unwrap();
        assert!(c.max_rel_error < 1e-4, "weeks {weeks}: {c:?}");
    }
    assert!(t0.elapsed().as_secs_f64() < 30.0);
}

#[test]
fn dense_net_passes_central_differences() {
    let net = build_network(
        &NetworkSpec::dense(
            DenseArchitecture {
                hidden: vec![12, 8, 4],
            },
            7,
        ),
        5,
    )
    .unwrap();
    let (x, y) = batch(10, 7, 6);
    let c = finite_difference_check(&net, &x, &y, 1e-5).unwrap();
    assert!(c.max_rel_error < 1e-4, "{c:?}");
}
