use nalgebra::{DMatrix, DVector};

use super::likelihood::{basis_matrix, loglik_at, theta_derivs, Sample};
use super::{leading_sign, parity_flip, FitOptions, SingleIndexModel};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::logistic::{logit, newton_logistic, NewtonControl};

const SEPARATION_BOUND: f64 = 1e6;
const ARMIJO: f64 = 1e-4;

/// OLS start `(Σ X_i X_i')^{-1} Σ X_i D_i`, scaled to unit norm and
/// sign-normalized.
pub fn initial_theta(data: &Dataset) -> Result<DVector<f64>> {
    let x = data.covariates();
    let gram = x.tr_mul(x);
    let eig = gram.clone().symmetric_eigenvalues();
    let (lo, hi) = eig
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition < 1e12) {
        return Err(Error::DegenerateDesign { condition });
    }
    let raw = gram
        .cholesky()
        .ok_or(Error::DegenerateDesign { condition })?
        .solve(&x.tr_mul(data.treatments()));
    let norm = raw.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::invalid("OLS initializer is the zero vector"));
    }
    let mut theta = raw / norm;
    if leading_sign(&theta) < 0.0 {
        theta.neg_mut();
    }
    Ok(theta)
}

#[derive(Debug, Clone)]
pub struct CoefficientFit {
    pub coeffs: DVector<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The likelihood was still improving past `‖C‖ = 1e6`; coefficients are
    /// the iterate at that bound.
    pub separated: bool,
    /// Objective after each accepted Newton step.
    pub trace: Vec<f64>,
}

pub(crate) fn fit_coefficients_sample(
    sample: Sample<'_>,
    theta: &DVector<f64>,
    k: usize,
    opts: &FitOptions,
) -> CoefficientFit {
    let features = basis_matrix(&sample.index(theta), k);
    let (num, den) = (0..sample.len()).fold((0.0, 0.0), |(num, den), i| {
        let wt = sample.weight(i);
        (num + wt * sample.d[i], den + wt)
    });
    let mut init = DVector::zeros(k);
    let mean = num / den;
    if mean > 0.0 && mean < 1.0 {
        init[0] = logit(mean);
    }
    let fit = newton_logistic(
        &features,
        sample.d,
        sample.weights,
        init,
        NewtonControl {
            max_iters: opts.max_newton_iters,
            grad_tol: opts.grad_tol,
            ridge: opts.ridge,
            separation_bound: SEPARATION_BOUND,
        },
    );
    CoefficientFit {
        coeffs: fit.coeffs,
        loglik: fit.loglik,
        iterations: fit.iterations,
        converged: fit.converged,
        separated: fit.separated,
        trace: fit.trace,
    }
}

/// Maximizes `ℓ_N(θ, ·)` over the coefficients for fixed `θ`: a logistic
/// regression on the `k` basis features of `w_i = X_i'θ`.
pub fn fit_coefficients(
    data: &Dataset,
    theta: &DVector<f64>,
    k: usize,
    opts: &FitOptions,
) -> Result<CoefficientFit> {
    opts.validate()?;
    check_theta(data, theta)?;
    if k == 0 {
        return Err(Error::invalid("truncation level k must be at least 1"));
    }
    Ok(fit_coefficients_sample(Sample::new(data), theta, k, opts))
}

#[derive(Debug, Clone)]
pub struct ThetaFit {
    pub theta: DVector<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Sup-norm of the sphere-projected gradient at the returned point.
    pub projected_grad: f64,
}

/// Orthonormal basis (`d × (d-1)`) of the complement of `theta`, taken from
/// the Householder reflector that maps `theta` onto a coordinate axis.
pub fn orthonormal_complement(theta: &DVector<f64>) -> DMatrix<f64> {
    let d = theta.len();
    let u = theta.normalize();
    let s = if u[0] >= 0.0 { -1.0 } else { 1.0 };
    let mut v = u.clone();
    v[0] -= s;
    let vv = v.norm_squared();
    let mut h = DMatrix::identity(d, d);
    if vv > 0.0 {
        h.ger(-2.0 / vv, &v, &v, 1.0);
    }
    h.columns(1, d - 1).into_owned()
}

fn project(theta: &DVector<f64>, grad: &DVector<f64>) -> DVector<f64> {
    grad - theta * theta.dot(grad)
}

pub(crate) fn fit_theta_sample(
    sample: Sample<'_>,
    coeffs: &[f64],
    theta_init: &DVector<f64>,
    opts: &FitOptions,
) -> ThetaFit {
    let d = theta_init.len();
    let mut theta = theta_init.normalize();
    if d == 1 {
        let loglik = loglik_at(sample, &theta, coeffs);
        return ThetaFit {
            theta,
            loglik,
            iterations: 0,
            converged: true,
            projected_grad: 0.0,
        };
    }

    let mut iterations = 0;
    let mut converged = false;
    let mut derivs = theta_derivs(sample, &theta, coeffs, true);
    let mut pgrad = project(&theta, &derivs.grad).amax();
    while iterations < opts.max_theta_iters {
        if pgrad <= opts.grad_tol {
            converged = true;
            break;
        }
        let basis = orthonormal_complement(&theta);
        let rgrad = basis.tr_mul(&derivs.grad);
        let hess = derivs.hessian.as_ref().expect("hessian requested");
        // Riemannian Hessian on the sphere: V'∇²V - (θ'∇) I.
        let mut neg_rhess = -(basis.tr_mul(hess) * &basis);
        let radial = theta.dot(&derivs.grad);
        for j in 0..d - 1 {
            neg_rhess[(j, j)] += radial;
        }
        let tangent = match neg_rhess.cholesky() {
            Some(chol) => chol.solve(&rgrad),
            None => rgrad.clone(),
        };
        let slope = rgrad.dot(&tangent);
        let direction = &basis * &tangent;
        let floor = 1e-13 * derivs.loglik.abs().max(1.0);

        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let cand = (&theta + &direction * t).normalize();
            let ll = loglik_at(sample, &cand, coeffs);
            if ll.is_finite() && ll >= derivs.loglik + ARMIJO * t * slope - floor {
                accepted = Some(cand);
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        let Some(cand) = accepted else {
            converged = slope <= floor;
            break;
        };
        theta = cand;
        derivs = theta_derivs(sample, &theta, coeffs, true);
        pgrad = project(&theta, &derivs.grad).amax();
    }
    if !converged && pgrad <= opts.grad_tol {
        converged = true;
    }
    ThetaFit {
        theta,
        loglik: derivs.loglik,
        iterations,
        converged,
        projected_grad: pgrad,
    }
}

/// Maximizes `ℓ_N(·, C)` over the unit sphere for fixed coefficients.
///
/// Steps are Riemannian Newton directions when the tangent-space Hessian is
/// negative definite and projected gradients otherwise, retracted onto the
/// sphere by normalization and accepted under an Armijo backtracking rule.
/// At return the projected gradient `(I - θθ')∇ℓ` has sup-norm at most
/// `grad_tol`, or `converged` is false. No sign normalization is applied.
pub fn fit_theta(
    data: &Dataset,
    coeffs: &DVector<f64>,
    k: usize,
    theta_init: &DVector<f64>,
    opts: &FitOptions,
) -> Result<ThetaFit> {
    opts.validate()?;
    check_theta(data, theta_init)?;
    if k == 0 || coeffs.len() != k {
        return Err(Error::invalid("coefficient length must equal k"));
    }
    Ok(fit_theta_sample(Sample::new(data), coeffs.as_slice(), theta_init, opts))
}

fn check_theta(data: &Dataset, theta: &DVector<f64>) -> Result<()> {
    if theta.len() != data.dim() {
        return Err(Error::invalid(format!(
            "theta has length {}, data has {} covariates",
            theta.len(),
            data.dim()
        )));
    }
    if (theta.norm() - 1.0).abs() > 1e-8 {
        return Err(Error::invalid("theta must have unit norm"));
    }
    Ok(())
}

/// Coefficient and θ stages from a given starting θ, repeated
/// `1 + alternation_rounds` times, then sign-normalized.
pub(crate) fn fit_steps_weighted(
    sample: Sample<'_>,
    theta_start: &DVector<f64>,
    k: usize,
    opts: &FitOptions,
) -> SingleIndexModel {
    let mut theta = theta_start.clone();
    let mut iterations = 0;
    let mut converged = true;
    let mut separated = false;
    let mut coeffs = DVector::zeros(k);
    let mut loglik = f64::NAN;
    for _ in 0..=opts.alternation_rounds {
        let cf = fit_coefficients_sample(sample, &theta, k, opts);
        iterations += cf.iterations;
        separated |= cf.separated;
        let tf = fit_theta_sample(sample, cf.coeffs.as_slice(), &theta, opts);
        iterations += tf.iterations;
        converged = cf.converged && tf.converged;
        coeffs = cf.coeffs;
        theta = tf.theta;
        loglik = tf.loglik;
    }
    if leading_sign(&theta) < 0.0 {
        theta.neg_mut();
        parity_flip(&mut coeffs);
    }
    SingleIndexModel {
        theta,
        coeffs,
        loglik,
        iterations,
        converged: converged && !separated,
        separated,
    }
}

/// OLS start, coefficient fit, θ fit (optionally alternated), then the
/// identification sign rule.
pub fn fit_single_index(data: &Dataset, k: usize, opts: &FitOptions) -> Result<SingleIndexModel> {
    opts.validate()?;
    if k == 0 {
        return Err(Error::invalid("truncation level k must be at least 1"));
    }
    let start = initial_theta(data).map_err(|e| e.in_stage("initial theta"))?;
    Ok(fit_steps_weighted(Sample::new(data), &start, k, opts))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_theta_examples() {
        let ds = Dataset::from_rows(
            &[0.0; 4],
            &[1.0, 0.0, 1.0, 0.0],
            &[vec![1.0], vec![-1.0], vec![1.0], vec![-1.0]],
        )
        .unwrap();
        assert_eq!(initial_theta(&ds).unwrap().as_slice(), &[1.0]);

        let ds = Dataset::from_rows(
            &[0.0; 4],
            &[1.0, 1.0, 0.0, 0.0],
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]],
        )
        .unwrap();
        let t = initial_theta(&ds).unwrap();
        let r = 1.0 / 2f64.sqrt();
        assert!((t[0] - r).abs() < 1e-15 && (t[1] - r).abs() < 1e-15);
    }

    #[test]
    fn initial_theta_flags_collinear_design() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let ds = Dataset::from_rows(&[0.0; 6], &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0], &rows).unwrap();
        match initial_theta(&ds) {
            Err(Error::DegenerateDesign { condition }) => assert!(condition >= 1e12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn complement_is_orthonormal() {
        for theta in [
            vec![0.8, -0.6],
            vec![-0.3, 0.5, 0.81240384],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0],
        ] {
            let t = DVector::from_vec(theta).normalize();
            let v = orthonormal_complement(&t);
            let gram = v.tr_mul(&v);
            assert!((gram - DMatrix::identity(t.len() - 1, t.len() - 1)).amax() < 1e-14);
            assert!(v.tr_mul(&t).amax() < 1e-14);
        }
    }

    #[test]
    fn paired_index_values_give_zero_coefficients() {
        let rows: Vec<Vec<f64>> = [-1.5, -0.2, 0.4, 1.1, 2.0]
            .iter()
            .flat_map(|&w| [vec![w], vec![w]])
            .collect();
        let d: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
        let ds = Dataset::from_rows(&[0.0; 10], &d, &rows).unwrap();
        let fit = fit_coefficients(&ds, &DVector::from_vec(vec![1.0]), 3, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.coeffs.amax() < 1e-12, "{:?}", fit.coeffs);
    }

    #[test]
    fn one_term_fit_is_logit_of_treated_share() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 * 0.37).sin()]).collect();
        let d: Vec<f64> = (0..40).map(|i| if i % 5 < 2 { 1.0 } else { 0.0 }).collect();
        let ds = Dataset::from_rows(&[0.0; 40], &d, &rows).unwrap();
        let opts = FitOptions::default();
        let fit = fit_coefficients(&ds, &DVector::from_vec(vec![1.0]), 1, &opts).unwrap();
        assert!((fit.coeffs[0] - logit(0.4)).abs() <= opts.grad_tol);
    }

    #[test]
    fn one_dimensional_theta_stays_put() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 / 10.0 - 1.5]).collect();
        let d: Vec<f64> = (0..30).map(|i| ((i * 7) % 3 == 0) as u8 as f64).collect();
        let ds = Dataset::from_rows(&[0.0; 30], &d, &rows).unwrap();
        let one = DVector::from_vec(vec![1.0]);
        let c = DVector::from_vec(vec![0.1, 0.5, -0.2]);
        let tf = fit_theta(&ds, &c, 3, &one, &FitOptions::default()).unwrap();
        assert_eq!(tf.theta.as_slice(), &[1.0]);
        let model = fit_single_index(&ds, 3, &FitOptions::default()).unwrap();
        assert_eq!(model.theta().as_slice(), &[1.0]);
    }
}
