//! Numerically stable logistic helpers and a damped Newton solver for
//! (weighted) logistic regression on an arbitrary feature matrix.

use nalgebra::{DMatrix, DVector};

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `Λ(z) = e^z / (1 + e^z)`.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `d ln Λ(z) + (1 - d) ln(1 - Λ(z))`, written as `d z - softplus(z)`.
#[inline]
pub fn bernoulli_loglik(d: f64, z: f64) -> f64 {
    d * z - softplus(z)
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Controls for [`newton_logistic`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct NewtonControl {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub ridge: f64,
    pub separation_bound: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct NewtonFit {
    pub coeffs: DVector<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub separated: bool,
    /// Average log-likelihood after each accepted step, starting value first.
    pub trace: Vec<f64>,
}

/// Average (weighted) log-likelihood of the linear predictor `eta`.
pub(crate) fn mean_loglik(d: &DVector<f64>, eta: &DVector<f64>, weights: Option<&DVector<f64>>) -> f64 {
    let n = d.len() as f64;
    let s: f64 = match weights {
        None => d.iter().zip(eta.iter()).map(|(&di, &z)| bernoulli_loglik(di, z)).sum(),
        Some(w) => d
            .iter()
            .zip(eta.iter())
            .zip(w.iter())
            .map(|((&di, &z), &wi)| wi * bernoulli_loglik(di, z))
            .sum(),
    };
    s / n
}

/// Maximizes `N^{-1} Σ ω_i [D_i ln Λ(f_i'c) + (1-D_i) ln(1-Λ(f_i'c))]`
/// over `c` by Newton's method with a trace-scaled ridge on the negative
/// Hessian and step halving. Accepted steps never decrease the objective
/// beyond floating-point noise.
pub(crate) fn newton_logistic(
    features: &DMatrix<f64>,
    d: &DVector<f64>,
    weights: Option<&DVector<f64>>,
    init: DVector<f64>,
    ctl: NewtonControl,
) -> NewtonFit {
    let n = features.nrows();
    let p = features.ncols();
    let nf = n as f64;
    let mut coeffs = init;
    let mut eta = features * &coeffs;
    let mut ll = mean_loglik(d, &eta, weights);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut separated = false;
    let mut iterations = 0;
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);

    while iterations < ctl.max_iters {
        let mut resid = DVector::zeros(n);
        let mut curv = DVector::zeros(n);
        for i in 0..n {
            let pi = sigmoid(eta[i]);
            resid[i] = weight(i) * (d[i] - pi);
            curv[i] = weight(i) * pi * (1.0 - pi);
        }
        let grad = features.tr_mul(&resid) / nf;
        if grad.amax() <= ctl.grad_tol {
            converged = true;
            break;
        }
        let mut scaled = features.clone();
        for mut col in scaled.column_iter_mut() {
            col.component_mul_assign(&curv);
        }
        let info = features.tr_mul(&scaled) / nf;
        let trace_info = info.trace();
        let mut ridge = ctl.ridge * if trace_info > 0.0 { trace_info } else { 1.0 };
        let step = loop {
            let mut reg = info.clone();
            for j in 0..p {
                reg[(j, j)] += ridge;
            }
            if let Some(chol) = reg.cholesky() {
                break chol.solve(&grad);
            }
            ridge = if ridge > 0.0 { ridge * 10.0 } else { 1e-12 };
        };
        let predicted = grad.dot(&step);
        let floor = 1e-13 * ll.abs().max(1.0);

        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let cand = &coeffs + &step * t;
            let cand_eta = features * &cand;
            let cand_ll = mean_loglik(d, &cand_eta, weights);
            if cand_ll >= ll - floor && cand_ll.is_finite() {
                accepted = Some((cand, cand_eta, cand_ll));
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        let Some((cand, cand_eta, cand_ll)) = accepted else {
            // No representable improvement left: optimal to working precision
            // when the Newton decrement is below the objective's resolution.
            converged = predicted <= floor;
            break;
        };
        debug_assert!(cand_ll >= ll - floor, "Newton step decreased the likelihood");
        let improved = cand_ll > ll;
        coeffs = cand;
        eta = cand_eta;
        ll = cand_ll;
        trace.push(ll);
        if coeffs.amax() > ctl.separation_bound && improved {
            separated = true;
            break;
        }
    }
    NewtonFit {
        coeffs,
        loglik: ll,
        iterations,
        converged: converged && !separated,
        separated,
        trace,
    }
}
