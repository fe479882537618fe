use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use yieldbench::metrics::{
    default_hex_size, evaluate, hexbin, pearson, percentage_error, regional_percentage_error,
};

fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(-50.0f64..50.0, n),
            prop::collection::vec(-50.0f64..50.0, n),
        )
    })
}

#[test]
fn mae_never_exceeds_rmse_on_1000_pairs() {
    let mut r = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..1000 {
        let n = r.random_range(1..200);
        let scale = 10f64.powi(r.random_range(-3..4));
        let truth: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0) * scale).collect();
        let pred: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0) * scale).collect();
        let m = evaluate(&pred, &truth).unwrap();
        assert!(m.mae <= m.rmse * (1.0 + 1e-12), "{} > {}", m.mae, m.rmse);
    }
}

#[test]
fn shifted_prediction_clamps_paper_r() {
    let m = evaluate(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
    assert_eq!(m.paper_r, 0.0);
    assert!(m.flags.paper_r_clamped);
    assert!((m.pearson_r - 1.0).abs() < 1e-15);
}

#[test]
fn percentage_error_of_8_and_6() {
    assert_eq!(percentage_error(&[8.0], &[6.0]).unwrap(), vec![Some(25.0)]);
    let s = regional_percentage_error(&["a".to_string()], &[8.0], &[6.0]).unwrap();
    assert_eq!(s.regions[0].mean_pct_error, 25.0);
}

proptest! {
    #[test]
    fn paper_r_identity((pred, truth) in pairs()) {
        let m = evaluate(&pred, &truth).unwrap();
        let mt = truth.iter().sum::<f64>() / truth.len() as f64;
        let sse: f64 = pred.iter().zip(&truth).map(|(p, t)| (t - p).powi(2)).sum();
        let sst: f64 = truth.iter().map(|t| (t - mt).powi(2)).sum();
        prop_assume!(sst > 1e-9);
        if !m.flags.paper_r_clamped {
            prop_assert!((m.paper_r.powi(2) + sse / sst - 1.0).abs() < 1e-12);
        } else {
            prop_assert_eq!(m.paper_r, 0.0);
            prop_assert!(sse > sst);
        }
    }

    #[test]
    fn pearson_is_affine_invariant(
        (a, b) in pairs(),
        scale in 0.01f64..100.0,
        shift in -100.0f64..100.0,
    ) {
        let r0 = pearson(&a, &b);
        let a2: Vec<f64> = a.iter().map(|v| v * scale + shift).collect();
        let b2: Vec<f64> = b.iter().map(|v| v * scale - shift).collect();
        match (r0, pearson(&a2, &b)) {
            (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12, "{} vs {}", x, y),
            (x, y) => prop_assert_eq!(x.is_none(), y.is_none()),
        }
        if let (Some(x), Some(y)) = (r0, pearson(&a, &b2)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn mae_bounded_by_rmse((pred, truth) in pairs()) {
        let m = evaluate(&pred, &truth).unwrap();
        prop_assert!(m.mae <= m.rmse * (1.0 + 1e-12));
        prop_assert!(m.rmse <= m.mae * (pred.len() as f64).sqrt() * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn hexbin_conserves_counts((pred, truth) in pairs(), size in 0.05f64..20.0) {
        let bins = hexbin(&pred, &truth, size).unwrap();
        prop_assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), pred.len());
        let bins = hexbin(&pred, &truth, default_hex_size(&truth)).unwrap();
        prop_assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), pred.len());
        prop_assert!(bins.windows(2).all(|w| (w[0].q, w[0].r) < (w[1].q, w[1].r)));
    }

    #[test]
    fn percentage_error_is_relative(a in 0.1f64..20.0, p in 0.0f64..40.0, k in 0.1f64..10.0) {
        let e1 = percentage_error(&[a], &[p]).unwrap()[0].unwrap();
        let e2 = percentage_error(&[a * k], &[p * k]).unwrap()[0].unwrap();
        prop_assert!((e1 - e2).abs() < 1e-9 * e1.max(1.0));
        prop_assert!((e1 - (a - p).abs() / a * 100.0).abs() < 1e-12 * e1.max(1.0));
    }
}
