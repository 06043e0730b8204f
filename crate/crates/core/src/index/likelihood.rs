//! Sieve log-likelihood `ℓ_N(θ, C)` and its exact derivatives.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::hermite::{fill_basis, link_with_derivs};
use crate::logistic::{bernoulli_loglik, sigmoid};

/// Borrowed view of the fitting data with optional per-observation weights
/// (the multiplier bootstrap reweights contributions).
#[derive(Clone, Copy)]
pub(crate) struct Sample<'a> {
    pub x: &'a DMatrix<f64>,
    pub d: &'a DVector<f64>,
    pub weights: Option<&'a DVector<f64>>,
}

impl<'a> Sample<'a> {
    pub fn new(data: &'a Dataset) -> Self {
        Self {
            x: data.covariates(),
            d: data.treatments(),
            weights: None,
        }
    }

    pub fn weighted(data: &'a Dataset, weights: &'a DVector<f64>) -> Self {
        Self {
            weights: Some(weights),
            ..Self::new(data)
        }
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[i])
    }

    pub fn index(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.x * theta
    }
}

/// `N × k` matrix of `h_j(w_i)`.
pub(crate) fn basis_matrix(w: &DVector<f64>, k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(w.len(), k);
    let mut row = vec![0.0; k];
    for (i, &wi) in w.iter().enumerate() {
        fill_basis(wi, &mut row);
        for j in 0..k {
            out[(i, j)] = row[j];
        }
    }
    out
}

pub(crate) fn loglik_at(sample: Sample<'_>, theta: &DVector<f64>, coeffs: &[f64]) -> f64 {
    let w = sample.index(theta);
    let mut scratch = vec![0.0; coeffs.len()];
    let mut total = 0.0;
    for i in 0..sample.len() {
        fill_basis(w[i], &mut scratch);
        let g: f64 = scratch.iter().zip(coeffs).map(|(h, c)| h * c).sum();
        total += sample.weight(i) * bernoulli_loglik(sample.d[i], g);
    }
    total / sample.len() as f64
}

/// Objective value, θ-gradient and (optionally) θ-Hessian at `(θ, C)`.
pub(crate) struct ThetaDerivs {
    pub loglik: f64,
    pub grad: DVector<f64>,
    pub hessian: Option<DMatrix<f64>>,
}

pub(crate) fn theta_derivs(
    sample: Sample<'_>,
    theta: &DVector<f64>,
    coeffs: &[f64],
    with_hessian: bool,
) -> ThetaDerivs {
    let n = sample.len();
    let w = sample.index(theta);
    let mut scratch = vec![0.0; coeffs.len()];
    let mut first = DVector::zeros(n);
    let mut second = DVector::zeros(n);
    let mut total = 0.0;
    for i in 0..n {
        let (g, g1, g2) = link_with_derivs(w[i], coeffs, &mut scratch);
        let p = sigmoid(g);
        let wt = sample.weight(i);
        let r = sample.d[i] - p;
        total += wt * bernoulli_loglik(sample.d[i], g);
        first[i] = wt * r * g1;
        second[i] = wt * (r * g2 - p * (1.0 - p) * g1 * g1);
    }
    let nf = n as f64;
    let grad = sample.x.tr_mul(&first) / nf;
    let hessian = with_hessian.then(|| {
        let mut scaled = sample.x.clone();
        for mut col in scaled.column_iter_mut() {
            col.component_mul_assign(&second);
        }
        sample.x.tr_mul(&scaled) / nf
    });
    ThetaDerivs {
        loglik: total / nf,
        grad,
        hessian,
    }
}

fn check_shapes(data: &Dataset, theta: &DVector<f64>, coeffs: &DVector<f64>, k: usize) -> Result<()> {
    if theta.len() != data.dim() {
        return Err(Error::invalid(format!(
            "theta has length {}, covariates have {} columns",
            theta.len(),
            data.dim()
        )));
    }
    if k == 0 || coeffs.len() != k {
        return Err(Error::invalid(format!(
            "coefficient vector has length {}, truncation level is {k}",
            coeffs.len()
        )));
    }
    Ok(())
}

/// `N^{-1} Σ [D_i ln Λ(g_i) + (1 - D_i) ln(1 - Λ(g_i))]` with
/// `g_i = H(X_i'θ)'C`. No clipping is applied.
pub fn log_likelihood(data: &Dataset, theta: &DVector<f64>, coeffs: &DVector<f64>, k: usize) -> Result<f64> {
    check_shapes(data, theta, coeffs, k)?;
    Ok(loglik_at(Sample::new(data), theta, coeffs.as_slice()))
}

/// Gradients of [`log_likelihood`] with respect to the coefficients and to
/// the (unconstrained) index vector.
#[derive(Debug, Clone)]
pub struct LikelihoodGradients {
    pub coeffs: DVector<f64>,
    pub theta: DVector<f64>,
}

pub fn likelihood_gradients(
    data: &Dataset,
    theta: &DVector<f64>,
    coeffs: &DVector<f64>,
    k: usize,
) -> Result<LikelihoodGradients> {
    check_shapes(data, theta, coeffs, k)?;
    let sample = Sample::new(data);
    let w = sample.index(theta);
    let basis = basis_matrix(&w, k);
    let g = &basis * coeffs;
    let resid = DVector::from_iterator(
        data.len(),
        g.iter().zip(data.treatments().iter()).map(|(&gi, &di)| di - sigmoid(gi)),
    );
    let grad_coeffs = basis.tr_mul(&resid) / data.len() as f64;
    let grad_theta = theta_derivs(sample, theta, coeffs.as_slice(), false).grad;
    Ok(LikelihoodGradients {
        coeffs: grad_coeffs,
        theta: grad_theta,
    })
}
