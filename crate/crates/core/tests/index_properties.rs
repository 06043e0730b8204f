use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use siate_core::hermite::eval_link;
use siate_core::index::{
    estimate_theta_cov, fit_coefficients, fit_theta, initial_theta, likelihood_gradients, log_likelihood,
    orthonormal_complement, CovarianceVariant,
};
use siate_core::sim::{generate_dataset, SettingId, SimulationSetting};
use siate_core::{fit_single_index, predict_propensity, Dataset, FitOptions};

fn random_data(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Dataset {
    loop {
        let x = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let dv = DVector::from_fn(n, |_, _| (rng.random::<f64>() < 0.5) as u8 as f64);
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        if let Ok(data) = Dataset::new(y, dv, x) {
            return data;
        }
    }
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize()
}

/// `‖a - b‖ / ‖b‖`
fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

#[test]
fn analytic_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(8..=50);
        let d = rng.random_range(1..=4);
        let k = rng.random_range(1..=5);
        let data = random_data(&mut rng, n, d);
        let theta = unit(&mut rng, d);
        let coeffs = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let grads = likelihood_gradients(&data, &theta, &coeffs, k).unwrap();
        let ll = |t: &DVector<f64>, c: &DVector<f64>| log_likelihood(&data, t, c, k).unwrap();

        let fd_c = DVector::from_fn(k, |j, _| {
            let mut up = coeffs.clone();
            let mut down = coeffs.clone();
            up[j] += h;
            down[j] -= h;
            (ll(&theta, &up) - ll(&theta, &down)) / (2.0 * h)
        });
        let fd_t = DVector::from_fn(d, |j, _| {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[j] += h;
            down[j] -= h;
            (ll(&up, &coeffs) - ll(&down, &coeffs)) / (2.0 * h)
        });
        let e = rel_err(&grads.coeffs, &fd_c).max(rel_err(&grads.theta, &fd_t));
        worst = worst.max(e);
    }
    assert!(worst < 1e-6, "worst relative error {worst:e}");
}

#[test]
fn coefficient_newton_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..30 {
        let sim = generate_dataset(&SimulationSetting::get(SettingId::S1B), 200, rng.random()).unwrap();
        let theta = initial_theta(&sim.data).unwrap();
        let fit = fit_coefficients(&sim.data, &theta, 5, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        for pair in fit.trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-13 * pair[0].abs().max(1.0));
        }
    }
}

#[test]
fn theta_stage_improves_the_likelihood() {
    let opts = FitOptions::default();
    for seed in 0..10 {
        let sim = generate_dataset(&SimulationSetting::get(SettingId::S3A), 400, seed).unwrap();
        let start = initial_theta(&sim.data).unwrap();
        let cf = fit_coefficients(&sim.data, &start, 3, &opts).unwrap();
        let tf = fit_theta(&sim.data, &cf.coeffs, 3, &start, &opts).unwrap();
        assert!(tf.loglik >= cf.loglik - 1e-12);
        assert!(tf.converged, "seed {seed}: projected gradient {}", tf.projected_grad);
        assert!(tf.projected_grad <= opts.grad_tol);
    }
}

#[test]
fn negated_covariates_give_the_same_propensities() {
    let opts = FitOptions::default();
    for (id, seed) in [(SettingId::S1A, 1u64), (SettingId::S1B, 2), (SettingId::S3B, 3), (SettingId::S8B, 4)] {
        let sim = generate_dataset(&SimulationSetting::get(id), 500, seed).unwrap();
        let a = fit_single_index(&sim.data, 4, &opts).unwrap();
        let flipped = sim.data.negated_covariates();
        let b = fit_single_index(&flipped, 4, &opts).unwrap();
        let pa = predict_propensity(&a, sim.data.covariates(), 1e-6).unwrap();
        let pb = predict_propensity(&b, flipped.covariates(), 1e-6).unwrap();
        assert!((pa - pb).amax() <= 1e-8, "{id}");
    }
}

#[test]
fn sign_transform_leaves_propensities_unchanged() {
    let sim = generate_dataset(&SimulationSetting::get(SettingId::S1B), 300, 5).unwrap();
    let m = fit_single_index(&sim.data, 5, &FitOptions::default()).unwrap();
    let flipped: Vec<f64> = m
        .coeffs()
        .iter()
        .enumerate()
        .map(|(j, c)| if j % 2 == 1 { -c } else { *c })
        .collect();
    let fitted = predict_propensity(&m, sim.data.covariates(), 1e-6).unwrap();
    for i in 0..sim.data.len() {
        let w = -(sim.data.covariates().row(i) * m.theta())[0];
        let p = (1.0 / (1.0 + (-eval_link(w, &flipped)).exp())).clamp(1e-6, 1.0 - 1e-6);
        assert!((p - fitted[i]).abs() <= 1e-8);
    }
}

#[test]
fn identification_sign_rule_holds() {
    for &id in SettingId::ALL {
        let sim = generate_dataset(&SimulationSetting::get(id), 200, 9).unwrap();
        if let Ok(m) = fit_single_index(&sim.data, 3, &FitOptions::default()) {
            let lead = m.theta().iter().find(|v| v.abs() > 1e-8).unwrap();
            assert!(*lead > 0.0, "{id}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fits_stay_on_the_sphere(seed in any::<u64>(), which in 0usize..24, k in 1usize..7) {
        let id = SettingId::ALL[which];
        let sim = generate_dataset(&SimulationSetting::get(id), 150, seed).unwrap();
        if let Ok(m) = fit_single_index(&sim.data, k, &FitOptions::default()) {
            prop_assert!((m.theta().norm() - 1.0).abs() <= 1e-10);
            if let Some(t0) = SimulationSetting::get(id).theta0_normalized() {
                let a = m.theta();
                let lhs = 1.0 - a.dot(&t0);
                let rhs = 0.5 * (a - &t0).norm_squared();
                prop_assert!((lhs - rhs).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn sandwich_is_symmetric_psd(seed in any::<u64>(), six in any::<bool>()) {
        let id = if six { SettingId::S3A } else { SettingId::S1B };
        let sim = generate_dataset(&SimulationSetting::get(id), 300, seed).unwrap();
        let m = fit_single_index(&sim.data, 3, &FitOptions::default()).unwrap();
        for variant in [CovarianceVariant::Unweighted, CovarianceVariant::VarianceWeighted] {
            if let Ok(c) = estimate_theta_cov(&sim.data, &m, variant, 1e-6) {
                let s = &c.reduced_cov;
                prop_assert!((s - s.transpose()).amax() <= 1e-10);
                prop_assert!(s.clone().symmetric_eigenvalues().min() >= -1e-8);
                let v = &c.basis_v;
                prop_assert!((v.tr_mul(v) - DMatrix::identity(v.ncols(), v.ncols())).amax() < 1e-12);
                prop_assert!((v.tr_mul(m.theta())).amax() < 1e-12);
            }
        }
    }
}

/// Monte Carlo variance of `V'(θ̂ - θ0)` against the mean plug-in
/// `reduced_cov / N`, Setting 1A at `N = 1600` over 500 replications.
fn sandwich_ratio(variant: CovarianceVariant) -> f64 {
    let setting = SimulationSetting::get(SettingId::S1A);
    let t0 = setting.theta0_normalized().unwrap();
    let v0 = orthonormal_complement(&t0);
    let n = 1600;
    let opts = FitOptions::default();
    let mut proj = Vec::new();
    let mut plug = Vec::new();
    for r in 0..500u64 {
        let sim = generate_dataset(&setting, n, 10_000 + r).unwrap();
        let m = fit_single_index(&sim.data, 3, &opts).unwrap();
        proj.push((v0.transpose() * (m.theta() - &t0))[0]);
        plug.push(estimate_theta_cov(&sim.data, &m, variant, 1e-6).unwrap().reduced_cov[(0, 0)] / n as f64);
    }
    let mean = proj.iter().sum::<f64>() / proj.len() as f64;
    let mc = proj.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (proj.len() - 1) as f64;
    let avg_plug = plug.iter().sum::<f64>() / plug.len() as f64;
    avg_plug / mc
}

#[test]
fn weighted_sandwich_matches_monte_carlo_covariance() {
    let ratio = sandwich_ratio(CovarianceVariant::VarianceWeighted);
    assert!((0.5..=2.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn unweighted_sandwich_understates_monte_carlo_covariance() {
    let ratio = sandwich_ratio(CovarianceVariant::Unweighted);
    assert!(ratio < 0.5, "ratio {ratio}");
}
