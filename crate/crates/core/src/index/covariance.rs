//! Sandwich covariance of the index estimate in the tangent directions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{fit::orthonormal_complement, predict_propensity, SingleIndexModel};
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Which curvature weight enters `Q̂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceVariant {
    /// `Q̂ = N^{-1} Σ ĝ'(w_i)^2 X_i X_i'`.
    #[default]
    Unweighted,
    /// `Q̂ = N^{-1} Σ π̂_i(1-π̂_i) ĝ'(w_i)^2 X_i X_i'`.
    VarianceWeighted,
}

#[derive(Debug, Clone, Serialize)]
pub struct ThetaCovariance {
    /// Estimated asymptotic covariance of `√N V'(θ̂ - θ0)`.
    pub reduced_cov: DMatrix<f64>,
    /// Columns span the orthogonal complement of `θ̂`.
    pub basis_v: DMatrix<f64>,
    pub variant: CovarianceVariant,
}

impl ThetaCovariance {
    /// `V Σ V' / n`: approximate covariance of `θ̂` itself for a sample of
    /// size `n`. Zero along `θ̂`, where the estimator moves at rate `1/N`.
    pub fn theta_cov(&self, n: usize) -> DMatrix<f64> {
        &self.basis_v * &self.reduced_cov * self.basis_v.transpose() / n as f64
    }
}

/// Plug-in `(V'Q̂V)^{-1} V'ŴV (V'Q̂V)^{-1}` with
/// `Ŵ = N^{-1} Σ (D_i - π̂_i)^2 ĝ'(w_i)^2 X_i X_i'`.
pub fn estimate_theta_cov(
    data: &Dataset,
    model: &SingleIndexModel,
    variant: CovarianceVariant,
    clip: f64,
) -> Result<ThetaCovariance> {
    let pi = predict_propensity(model, data.covariates(), clip)?;
    let w = model.index(data.covariates())?;
    let slope = w.map(|wi| model.link_derivs(wi).1);
    let d = data.treatments();
    let q_weight = DVector::from_fn(data.len(), |i, _| {
        let m = match variant {
            CovarianceVariant::Unweighted => 1.0,
            CovarianceVariant::VarianceWeighted => pi[i] * (1.0 - pi[i]),
        };
        m * slope[i] * slope[i]
    });
    let w_weight = DVector::from_fn(data.len(), |i, _| {
        let r = d[i] - pi[i];
        r * r * slope[i] * slope[i]
    });
    let (q, wm) = (
        weighted_gram(data.covariates(), &q_weight),
        weighted_gram(data.covariates(), &w_weight),
    );
    sandwich(model.theta(), &q, &wm, variant)
}

fn weighted_gram(x: &DMatrix<f64>, weights: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = x.clone();
    for mut col in scaled.column_iter_mut() {
        col.component_mul_assign(weights);
    }
    x.tr_mul(&scaled) / x.nrows() as f64
}

/// Sandwich assembly from given `Q̂` and `Ŵ`.
pub(crate) fn sandwich(
    theta: &DVector<f64>,
    q: &DMatrix<f64>,
    w: &DMatrix<f64>,
    variant: CovarianceVariant,
) -> Result<ThetaCovariance> {
    let basis_v = orthonormal_complement(theta);
    let bread = basis_v.tr_mul(q) * &basis_v;
    let meat = basis_v.tr_mul(w) * &basis_v;
    let dim = bread.nrows();
    let inv = if dim == 0 {
        bread.clone()
    } else {
        let chol = bread.clone().cholesky().ok_or_else(|| {
            Error::RankDeficient("V'QV is not positive definite".into())
        })?;
        let eig = bread.symmetric_eigenvalues();
        let (lo, hi) = eig
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if !(lo > hi * 1e-14) {
            return Err(Error::RankDeficient(format!(
                "V'QV eigenvalue range [{lo:.3e}, {hi:.3e}]"
            )));
        }
        chol.inverse()
    };
    let raw = &inv * meat * &inv;
    let reduced_cov = (&raw + raw.transpose()) * 0.5;
    Ok(ThetaCovariance {
        reduced_cov,
        basis_v,
        variant,
    })
}
