use std::f64::consts::PI;

use proptest::prelude::*;
use siate_core::hermite::{eval_basis, eval_basis_deriv, gauss_hermite, gram_check};

fn sqrt_2pi() -> f64 {
    (2.0 * PI).sqrt()
}

#[test]
fn orthonormal_up_to_degree_twelve() {
    for m in 0..=12 {
        for n in 0..=12 {
            let g = gram_check(m, n, 200).unwrap() / sqrt_2pi();
            let delta = if m == n { 1.0 } else { 0.0 };
            assert!((g - delta).abs() < 1e-8, "({m}, {n}): {g}");
        }
    }
}

#[test]
fn gram_examples() {
    assert!((gram_check(3, 3, 200).unwrap() - sqrt_2pi()).abs() < 1e-10);
    assert!(gram_check(2, 5, 200).unwrap().abs() < 1e-10);
    assert!((gram_check(12, 12, 200).unwrap() - sqrt_2pi()).abs() < 1e-8);
    assert!(gram_check(20, 20, 49).is_err());
    assert!(gram_check(41, 0, 200).is_err());
}

#[test]
fn quadrature_weights_sum_to_gaussian_mass() {
    for n in [2usize, 7, 40, 200] {
        let rule = gauss_hermite(n).unwrap();
        let total: f64 = rule.weights.iter().sum();
        assert!((total / sqrt_2pi() - 1.0).abs() < 1e-12, "n = {n}");
        assert!(rule.nodes.windows(2).all(|p| p[0] < p[1]));
    }
}

/// `(1/√k) Σ_j h_j(w)² exp(-w²/2)` over the oscillatory region.
#[test]
fn christoffel_growth_stays_bounded() {
    for k in 1..=50usize {
        let edge = (2.0 * k as f64).sqrt() * (1.0 - (k as f64).powf(-2.0 / 3.0));
        for step in 0..=200 {
            let w = -edge + 2.0 * edge * step as f64 / 200.0;
            let h = eval_basis(w, k).unwrap();
            let s: f64 = h.values().iter().map(|v| v * v).sum::<f64>() * (-w * w / 2.0).exp() / (k as f64).sqrt();
            assert!((0.01..=100.0).contains(&s), "k = {k}, w = {w}: {s}");
        }
    }
}

#[test]
fn full_gaussian_factor_decays_below_the_floor() {
    let k = 50;
    let w = (2.0 * k as f64).sqrt() * (1.0 - (k as f64).powf(-2.0 / 3.0));
    let h = eval_basis(w, k).unwrap();
    let s: f64 = h.values().iter().map(|v| v * v).sum::<f64>() * (-w * w).exp() / (k as f64).sqrt();
    assert!(s < 0.01);
}

proptest! {
    #[test]
    fn parity(w in -12.0f64..12.0, k in 1usize..40) {
        let a = eval_basis(w, k).unwrap();
        let b = eval_basis(-w, k).unwrap();
        for j in 0..k {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let diff = (b[j] - sign * a[j]).abs();
            prop_assert!(diff <= 1e-12 * a[j].abs().max(f64::MIN_POSITIVE), "j = {}", j);
        }
    }

    #[test]
    fn derivative_identity_is_exact(w in -10.0f64..10.0, k in 1usize..40) {
        let h = eval_basis(w, k).unwrap();
        let dh = eval_basis_deriv(w, k).unwrap();
        prop_assert_eq!(dh[0], 0.0);
        for m in 1..k {
            prop_assert_eq!(dh[m], (m as f64).sqrt() * h[m - 1]);
        }
    }

    #[test]
    fn derivative_matches_central_differences(w in -5.0f64..5.0, k in 1usize..16) {
        let step = 1e-5;
        let up = eval_basis(w + step, k).unwrap();
        let down = eval_basis(w - step, k).unwrap();
        let dh = eval_basis_deriv(w, k).unwrap();
        let scale = dh.values().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for m in 0..k {
            let fd = (up[m] - down[m]) / (2.0 * step);
            prop_assert!((fd - dh[m]).abs() < 1e-6 * scale, "m = {}: {} vs {}", m, fd, dh[m]);
        }
    }

    #[test]
    fn constant_term_and_finiteness(w in -30.0f64..30.0, k in 1usize..60) {
        let h = eval_basis(w, k).unwrap();
        prop_assert_eq!(h.order_count(), k);
        prop_assert_eq!(h[0], 1.0);
        prop_assert!(h.values().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn rejects_bad_input() {
    assert!(eval_basis(0.5, 0).is_err());
    assert!(eval_basis(f64::NAN, 3).is_err());
    assert!(eval_basis_deriv(f64::INFINITY, 3).is_err());
}
