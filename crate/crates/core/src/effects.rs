//! Regression-form effect estimators and their plug-in standard errors.
//!
//! With `r_i = D_i - π̂_i` and `υ̂_i = π̂_i(1 - π̂_i)`:
//!
//! * weighted ATE: `β̂ = Σ r_i Y_i / Σ r_i²`, the slope of `Y` on `r`;
//!   `σ̂_ω² = mean((r_i Û_i)²) / mean(υ̂_i)²` with `Û_i = Y_i - β̂ r_i`.
//! * ATE: `γ̂ = Σ υ̂_i⁻¹ r_i Y_i / Σ υ̂_i⁻¹ r_i²`, the slope after scaling
//!   both sides by `υ̂_i^{-1/2}`; `σ̂² = mean((υ̂_i⁻¹ r_i (Y_i - γ̂ r_i))²)`.
//!
//! Both standard errors are `σ̂ / √N` and all moments divide by `N`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::index::{fit_single_index, predict_propensity, FitOptions, SingleIndexModel};
use crate::logistic::{newton_logistic, sigmoid, NewtonControl};
use crate::truncation::{default_k, select_k, CvMode, CvResult};

/// Clamp used by the logistic-IPW baseline.
pub const BASELINE_CLIP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    WeightedAte,
    Ate,
    NaiveDiff,
    IpwLogistic,
    RegressionAdjust,
}

impl Estimand {
    pub fn label(self) -> &'static str {
        match self {
            Estimand::WeightedAte => "weighted_ate",
            Estimand::Ate => "ate",
            Estimand::NaiveDiff => "naive_diff",
            Estimand::IpwLogistic => "ipw_logistic",
            Estimand::RegressionAdjust => "regression_adjust",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    NaiveDiff,
    IpwLogistic,
    RegressionAdjust,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AteEstimate {
    pub estimand: Estimand,
    pub point: f64,
    pub std_error: f64,
    pub z_stat: f64,
    pub p_value: f64,
    pub ci_level: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub n_used: usize,
    pub trim_count: usize,
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// Two-sided normal critical value for a `level` confidence interval.
pub fn normal_critical(level: f64) -> f64 {
    std_normal().inverse_cdf(0.5 + level / 2.0)
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("confidence level {level} outside (0, 1)")))
    }
}

impl AteEstimate {
    pub(crate) fn assemble(
        estimand: Estimand,
        point: f64,
        std_error: f64,
        ci_level: f64,
        n_used: usize,
        trim_count: usize,
    ) -> Self {
        let z_stat = if std_error > 0.0 {
            point / std_error
        } else if point == 0.0 {
            0.0
        } else {
            point.signum() * f64::INFINITY
        };
        let p_value = if z_stat.is_infinite() {
            0.0
        } else {
            (2.0 * std_normal().sf(z_stat.abs())).min(1.0)
        };
        let half = normal_critical(ci_level) * std_error;
        Self {
            estimand,
            point,
            std_error,
            z_stat,
            p_value,
            ci_level,
            ci_lower: point - half,
            ci_upper: point + half,
            n_used,
            trim_count,
        }
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.ci_lower <= truth && truth <= self.ci_upper
    }
}

fn check_propensity(data: &Dataset, pi_hat: &DVector<f64>) -> Result<()> {
    if pi_hat.len() != data.len() {
        return Err(Error::invalid(format!(
            "{} propensities for {} units",
            pi_hat.len(),
            data.len()
        )));
    }
    if let Some(i) = pi_hat.iter().position(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::invalid(format!(
            "propensity {} at unit {} is outside (0, 1)",
            pi_hat[i],
            i + 1
        )));
    }
    Ok(())
}

/// Variance-weighted ATE: slope of `Y` on `D - π̂`.
pub fn weighted_ate(data: &Dataset, pi_hat: &DVector<f64>, ci_level: f64) -> Result<AteEstimate> {
    check_level(ci_level)?;
    check_propensity(data, pi_hat)?;
    let y = data.outcomes();
    let r = data.treatments() - pi_hat;
    let den = r.norm_squared();
    if !(den > 0.0) {
        return Err(Error::DegeneratePropensity(
            "Σ(D - π̂)² is zero".into(),
        ));
    }
    let point = r.dot(y) / den;
    let n = data.len() as f64;
    let meat = r
        .iter()
        .zip(y.iter())
        .map(|(&ri, &yi)| {
            let s = ri * (yi - point * ri);
            s * s
        })
        .sum::<f64>()
        / n;
    let bread = pi_hat.iter().map(|&p| p * (1.0 - p)).sum::<f64>() / n;
    let sigma2 = meat / (bread * bread);
    Ok(AteEstimate::assemble(
        Estimand::WeightedAte,
        point,
        (sigma2 / n).sqrt(),
        ci_level,
        data.len(),
        0,
    ))
}

/// ATE: slope of `υ̂^{-1/2} Y` on `υ̂^{-1/2}(D - π̂)`. Units with
/// `υ̂_i < trim (1 - trim)` are dropped and counted.
pub fn ate(data: &Dataset, pi_hat: &DVector<f64>, ci_level: f64, trim: f64) -> Result<AteEstimate> {
    check_level(ci_level)?;
    check_propensity(data, pi_hat)?;
    if !(0.0..0.1).contains(&trim) {
        return Err(Error::invalid(format!("trim {trim} outside [0, 0.1)")));
    }
    let cutoff = trim * (1.0 - trim);
    let y = data.outcomes();
    let d = data.treatments();
    let kept: Vec<(f64, f64, f64)> = (0..data.len())
        .filter_map(|i| {
            let v = pi_hat[i] * (1.0 - pi_hat[i]);
            (v >= cutoff).then(|| (d[i] - pi_hat[i], v, y[i]))
        })
        .collect();
    let trim_count = data.len() - kept.len();
    if kept.is_empty() {
        return Err(Error::EmptySample { trim });
    }
    let (num, den) = kept
        .iter()
        .fold((0.0, 0.0), |(num, den), &(r, v, y)| (num + r * y / v, den + r * r / v));
    if !(den > 0.0) {
        return Err(Error::DegeneratePropensity(
            "Σ υ̂⁻¹(D - π̂)² is zero".into(),
        ));
    }
    let point = num / den;
    let m = kept.len() as f64;
    let sigma2 = kept
        .iter()
        .map(|&(r, v, y)| {
            let s = r * (y - point * r) / v;
            s * s
        })
        .sum::<f64>()
        / m;
    Ok(AteEstimate::assemble(
        Estimand::Ate,
        point,
        (sigma2 / m).sqrt(),
        ci_level,
        kept.len(),
        trim_count,
    ))
}

/// Both regression-form estimates from a given propensity vector. This is
/// also the entry point for supplying known propensities.
pub fn effects_from_propensity(
    data: &Dataset,
    pi_hat: &DVector<f64>,
    ci_level: f64,
    trim: f64,
) -> Result<(AteEstimate, AteEstimate)> {
    Ok((
        weighted_ate(data, pi_hat, ci_level)?,
        ate(data, pi_hat, ci_level, trim)?,
    ))
}

fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut z = DMatrix::from_element(x.nrows(), x.ncols() + 1, 1.0);
    z.columns_mut(1, x.ncols()).copy_from(x);
    z
}

/// Logistic regression of `D` on `(1, X)`; returns clipped fitted values.
pub fn logistic_propensity(data: &Dataset, clip: f64) -> Result<DVector<f64>> {
    let z = with_intercept(data.covariates());
    let fit = newton_logistic(
        &z,
        data.treatments(),
        None,
        DVector::zeros(z.ncols()),
        NewtonControl {
            max_iters: 200,
            grad_tol: 1e-10,
            ridge: 1e-10,
            separation_bound: 1e6,
        },
    );
    if !fit.converged {
        return Err(Error::invalid("logistic propensity fit did not converge"));
    }
    Ok((z * fit.coeffs).map(|e| sigmoid(e).clamp(clip, 1.0 - clip)))
}

/// Comparison estimators that do not use the single-index model.
///
/// * `NaiveDiff`: difference in arm means, Welch variance.
/// * `IpwLogistic`: Hájek-normalized IPW with logistic propensities on
///   `(1, X)`; variance from the influence function with the propensity
///   treated as known.
/// * `RegressionAdjust`: OLS of `Y` on `(1, D, X)`, HC1 robust variance of
///   the `D` coefficient.
pub fn baseline_estimate(data: &Dataset, method: BaselineMethod, ci_level: f64) -> Result<AteEstimate> {
    check_level(ci_level)?;
    let y = data.outcomes();
    let d = data.treatments();
    let n = data.len();
    let n1 = d.iter().filter(|&&t| t == 1.0).count();
    let n0 = n - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::invalid("one treatment arm is empty"));
    }
    match method {
        BaselineMethod::NaiveDiff => {
            let arm = |t: f64| y.iter().zip(d.iter()).filter(move |(_, &di)| di == t).map(|(&yi, _)| yi);
            let mean1 = arm(1.0).sum::<f64>() / n1 as f64;
            let mean0 = arm(0.0).sum::<f64>() / n0 as f64;
            let var = |t: f64, mean: f64, m: usize| {
                if m < 2 {
                    0.0
                } else {
                    arm(t).map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64
                }
            };
            let se = (var(1.0, mean1, n1) / n1 as f64 + var(0.0, mean0, n0) / n0 as f64).sqrt();
            Ok(AteEstimate::assemble(Estimand::NaiveDiff, mean1 - mean0, se, ci_level, n, 0))
        }
        BaselineMethod::IpwLogistic => {
            let p = logistic_propensity(data, BASELINE_CLIP)?;
            let (mut s1, mut w1, mut s0, mut w0) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..n {
                if d[i] == 1.0 {
                    s1 += y[i] / p[i];
                    w1 += 1.0 / p[i];
                } else {
                    s0 += y[i] / (1.0 - p[i]);
                    w0 += 1.0 / (1.0 - p[i]);
                }
            }
            let (mu1, mu0) = (s1 / w1, s0 / w0);
            let nf = n as f64;
            let (a1, a0) = (w1 / nf, w0 / nf);
            let var = (0..n)
                .map(|i| {
                    let psi = if d[i] == 1.0 {
                        (y[i] - mu1) / p[i] / a1
                    } else {
                        -(y[i] - mu0) / (1.0 - p[i]) / a0
                    };
                    psi * psi
                })
                .sum::<f64>()
                / nf;
            Ok(AteEstimate::assemble(
                Estimand::IpwLogistic,
                mu1 - mu0,
                (var / nf).sqrt(),
                ci_level,
                n,
                0,
            ))
        }
        BaselineMethod::RegressionAdjust => {
            let x = data.covariates();
            let p = x.ncols() + 2;
            if n <= p {
                return Err(Error::invalid("too few units for regression adjustment"));
            }
            let mut z = DMatrix::from_element(n, p, 1.0);
            z.column_mut(1).copy_from(d);
            z.columns_mut(2, x.ncols()).copy_from(x);
            let ztz_inv = z
                .tr_mul(&z)
                .try_inverse()
                .ok_or_else(|| Error::RankDeficient("(1, D, X) design is singular".into()))?;
            let coef = &ztz_inv * z.tr_mul(y);
            let resid = y - &z * &coef;
            let mut scaled = z.clone();
            for mut col in scaled.column_iter_mut() {
                col.component_mul_assign(&resid);
            }
            let meat = scaled.tr_mul(&scaled);
            let cov = &ztz_inv * meat * &ztz_inv * (n as f64 / (n - p) as f64);
            Ok(AteEstimate::assemble(
                Estimand::RegressionAdjust,
                coef[1],
                cov[(1, 1)].max(0.0).sqrt(),
                ci_level,
                n,
                0,
            ))
        }
    }
}

/// How the truncation level is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KPolicy {
    Fixed(usize),
    DefaultRule,
    CrossValidate {
        candidates: Vec<usize>,
        folds: usize,
        mode: CvMode,
        seed: u64,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct EffectsReport {
    pub model: SingleIndexModel,
    pub weighted_ate: AteEstimate,
    pub ate: AteEstimate,
    pub cv: Option<CvResult>,
}

/// Full pipeline: resolve `k`, fit the single-index model, predict clipped
/// in-sample propensities and form both estimates.
pub fn estimate_effects(
    data: &Dataset,
    k_policy: &KPolicy,
    opts: &FitOptions,
    ci_level: f64,
    trim: f64,
) -> Result<EffectsReport> {
    let (k, cv) = match k_policy {
        KPolicy::Fixed(k) => (*k, None),
        KPolicy::DefaultRule => (default_k(data.len()), None),
        KPolicy::CrossValidate {
            candidates,
            folds,
            mode,
            seed,
        } => {
            let cv = select_k(data, candidates, *mode, *folds, *seed, opts)
                .map_err(|e| e.in_stage("truncation selection"))?;
            (cv.chosen_k, Some(cv))
        }
    };
    let model = fit_single_index(data, k, opts).map_err(|e| e.in_stage("propensity fit"))?;
    let pi = predict_propensity(&model, data.covariates(), opts.prop_clip)
        .map_err(|e| e.in_stage("propensity prediction"))?;
    let (weighted, full) =
        effects_from_propensity(data, &pi, ci_level, trim).map_err(|e| e.in_stage("effects"))?;
    Ok(EffectsReport {
        model,
        weighted_ate: weighted,
        ate: full,
        cv,
    })
}
