//! Single-index sieve propensity model `π(X) = Λ(g(X'θ))`.
//!
//! The link `g` is expanded in the first `k` orthonormal Hermite functions
//! and `θ` lives on the unit sphere with its first nonzero coordinate
//! positive. Fitting follows the two-stage procedure: an OLS start for `θ`,
//! a logistic fit of the coefficients at that `θ`, then a sphere-constrained
//! ascent in `θ` with the coefficients held fixed.

mod covariance;
mod fit;
mod likelihood;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::link_with_derivs;
use crate::logistic::sigmoid;

pub use covariance::{estimate_theta_cov, CovarianceVariant, ThetaCovariance};
pub use fit::{
    fit_coefficients, fit_single_index, fit_theta, initial_theta, CoefficientFit, ThetaFit,
};
pub(crate) use fit::fit_steps_weighted;
pub use fit::orthonormal_complement;
pub use likelihood::{likelihood_gradients, log_likelihood, LikelihoodGradients};
pub(crate) use likelihood::Sample;

/// Magnitude below which a coordinate is treated as zero by the sign rule.
pub const SIGN_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_newton_iters: usize,
    pub max_theta_iters: usize,
    pub grad_tol: f64,
    /// Extra (coefficients, θ) passes after the first; 0 is the plain
    /// two-stage procedure.
    pub alternation_rounds: usize,
    /// Propensities are clamped to `[prop_clip, 1 - prop_clip]` at
    /// prediction time only.
    pub prop_clip: f64,
    /// Newton ridge, relative to the trace of the information matrix.
    pub ridge: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_newton_iters: 100,
            max_theta_iters: 200,
            grad_tol: 1e-8,
            alternation_rounds: 0,
            prop_clip: 1e-6,
            ridge: 1e-10,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_newton_iters == 0 || self.max_theta_iters == 0 {
            return Err(Error::invalid("iteration limits must be positive"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::invalid("grad_tol must be positive"));
        }
        if !(self.prop_clip > 0.0 && self.prop_clip < 0.5) {
            return Err(Error::invalid("prop_clip must lie in (0, 0.5)"));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::invalid("ridge must be nonnegative"));
        }
        Ok(())
    }
}

/// Fitted `(θ̂, Ĉ_k)` pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingleIndexModel {
    theta: DVector<f64>,
    coeffs: DVector<f64>,
    loglik: f64,
    iterations: usize,
    converged: bool,
    separated: bool,
}

impl SingleIndexModel {
    /// Assembles a model from a unit-norm, sign-normalized `θ` and a
    /// coefficient vector. Mainly useful for tests and for reloading.
    pub fn from_parts(theta: DVector<f64>, coeffs: DVector<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::invalid("empty coefficient vector"));
        }
        if (theta.norm() - 1.0).abs() > 1e-10 {
            return Err(Error::invalid("theta must have unit norm"));
        }
        if leading_sign(&theta) < 0.0 {
            return Err(Error::invalid("theta's first nonzero coordinate must be positive"));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("non-finite coefficient"));
        }
        Ok(Self {
            theta,
            coeffs,
            loglik: f64::NAN,
            iterations: 0,
            converged: true,
            separated: false,
        })
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    pub fn truncation(&self) -> usize {
        self.coeffs.len()
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Coefficient stage hit the separation bound.
    pub fn separated(&self) -> bool {
        self.separated
    }

    /// `ĝ_k(w)`.
    pub fn link(&self, w: f64) -> f64 {
        self.link_derivs(w).0
    }

    /// `(ĝ_k(w), ĝ_k'(w), ĝ_k''(w))`.
    pub fn link_derivs(&self, w: f64) -> (f64, f64, f64) {
        let mut scratch = vec![0.0; self.coeffs.len()];
        link_with_derivs(w, self.coeffs.as_slice(), &mut scratch)
    }

    /// Index values `X θ̂`.
    pub fn index(&self, covariates: &DMatrix<f64>) -> Result<DVector<f64>> {
        if covariates.ncols() != self.dim() {
            return Err(Error::invalid(format!(
                "covariates have {} columns, model expects {}",
                covariates.ncols(),
                self.dim()
            )));
        }
        Ok(covariates * &self.theta)
    }
}

/// Sign of the first coordinate whose magnitude exceeds [`SIGN_EPS`]
/// (`+1` for the zero vector).
pub(crate) fn leading_sign(theta: &DVector<f64>) -> f64 {
    theta
        .iter()
        .find(|v| v.abs() > SIGN_EPS)
        .map_or(1.0, |v| v.signum())
}

/// `c_j ← (-1)^j c_j` for degree `j`, which composes with `θ ← -θ` to leave
/// `w ↦ ĝ(X'θ)` unchanged since `h_j(-w) = (-1)^j h_j(w)`.
pub(crate) fn parity_flip(coeffs: &mut DVector<f64>) {
    for (j, c) in coeffs.iter_mut().enumerate() {
        if j % 2 == 1 {
            *c = -*c;
        }
    }
}

/// `Λ(ĝ_k(x'θ̂))` per row, clamped to `[clip, 1 - clip]`.
pub fn predict_propensity(
    model: &SingleIndexModel,
    covariates: &DMatrix<f64>,
    clip: f64,
) -> Result<DVector<f64>> {
    if !(clip > 0.0 && clip < 0.5) {
        return Err(Error::invalid("clip must lie in (0, 0.5)"));
    }
    let w = model.index(covariates)?;
    let mut scratch = vec![0.0; model.truncation()];
    Ok(w.map(|wi| {
        let g = link_with_derivs(wi, model.coeffs.as_slice(), &mut scratch).0;
        sigmoid(g).clamp(clip, 1.0 - clip)
    }))
}
