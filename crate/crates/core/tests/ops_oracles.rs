// SPDX-License-Identifier: MIT OR Apache-2.0

use attriprobe::probes::ops::{
    gelu, gelu_grad, normal_cdf, softmax, softmax_backward, sparsemax, sparsemax_backward, sparsemax_threshold,
};
use attriprobe_oracles::{
    central_difference, gelu_quadrature, kkt_violation, normal_cdf_quadrature, simplex_projection_enumerated,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn sparsemax_matches_enumerated_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let n = rng.random_range(1..=10);
        let scale = [0.1, 1.0, 10.0][rng.random_range(0..3)];
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
        let got = sparsemax(&z);
        let want = simplex_projection_enumerated(&z);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-9, "z={z:?} got={got:?} want={want:?}");
        }
        assert!(kkt_violation(&z, &got, sparsemax_threshold(&z)) <= 1e-9);
    }
}

#[test]
fn sparsemax_known_values() {
    assert_eq!(sparsemax(&[0.0, 0.0]), vec![0.5, 0.5]);
    assert_eq!(sparsemax(&[3.0, 0.0, 0.0]), vec![1.0, 0.0, 0.0]);
    let a = sparsemax(&[1.0, 0.5, -2.0]);
    assert!((a[0] - 0.75).abs() < 1e-15 && (a[1] - 0.25).abs() < 1e-15 && a[2] == 0.0);
}

#[test]
fn gelu_matches_quadrature() {
    for i in 0..=240 {
        let x = -6.0 + 0.05 * f64::from(i);
        assert!((normal_cdf(x) - normal_cdf_quadrature(x)).abs() <= 1e-10, "Phi({x})");
        assert!((gelu(x) - gelu_quadrature(x)).abs() <= 1e-10, "gelu({x})");
        let fd = central_difference(|v| gelu(v[0]), &[x], 0, 1e-5);
        assert!((gelu_grad(x) - fd).abs() <= 1e-8, "gelu'({x}): {} vs {fd}", gelu_grad(x));
    }
}

/// Directional check of a vector-Jacobian product: `d/dθ_i <g, f(θ)>`.
fn vjp_numeric(f: fn(&[f64]) -> Vec<f64>, theta: &[f64], g: &[f64], i: usize) -> f64 {
    central_difference(|t| f(t).iter().zip(g).map(|(a, b)| a * b).sum(), theta, i, 1e-6)
}

#[test]
fn simplex_backward_passes_match_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0;
    while checked < 200 {
        let n = rng.random_range(1..=8);
        let theta: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let tau = sparsemax_threshold(&theta);
        if theta.iter().any(|t| (t - tau).abs() < 1e-3) {
            continue;
        }
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let soft = softmax_backward(&softmax(&theta), &g);
        let sparse = sparsemax_backward(&sparsemax(&theta), &g);
        for i in 0..n {
            assert!((soft[i] - vjp_numeric(softmax, &theta, &g, i)).abs() <= 1e-8);
            assert!((sparse[i] - vjp_numeric(sparsemax, &theta, &g, i)).abs() <= 1e-8);
        }
        checked += 1;
    }
}

fn logits() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-20.0f64..20.0, 1..12)
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(z in logits(), shift in -50.0f64..50.0) {
        let a = softmax(&z);
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(a.iter().all(|v| *v > 0.0));
        let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
        for (x, y) in a.iter().zip(softmax(&shifted)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn sparsemax_is_a_sparse_distribution(z in logits(), shift in -50.0f64..50.0) {
        let a = sparsemax(&z);
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(a.iter().all(|v| *v >= 0.0));
        // Order preserving: larger logits never get less mass.
        for i in 0..z.len() {
            for j in 0..z.len() {
                if z[i] > z[j] {
                    prop_assert!(a[i] >= a[j]);
                }
            }
        }
        let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
        for (x, y) in a.iter().zip(sparsemax(&shifted)) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn sparsemax_is_idempotent_on_the_simplex(z in logits()) {
        let a = sparsemax(&z);
        for (x, y) in a.iter().zip(sparsemax(&a)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
