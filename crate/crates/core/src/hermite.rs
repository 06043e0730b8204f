//! Orthonormal probabilists' Hermite system.
//!
//! `h_m(w) = He_m(w) / sqrt(m!)`, orthogonal under the weight `exp(-w^2/2)`
//! with `∫ h_m h_n exp(-w^2/2) dw = sqrt(2π) δ_mn`. A truncation level `k`
//! always means degrees `0..k`, so the constant function is the first entry.
//!
//! Values are produced by the normalized three-term recurrence
//! `h_{m+1} = (w h_m - sqrt(m) h_{m-1}) / sqrt(m+1)`, which never forms a
//! factorial. Derivatives use `h_m' = sqrt(m) h_{m-1}`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// `(h_0(w), ..., h_{k-1}(w))`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisVector {
    values: Vec<f64>,
}

/// `(h_0'(w), ..., h_{k-1}'(w))`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisDerivVector {
    values: Vec<f64>,
}

macro_rules! basis_accessors {
    ($t:ty) => {
        impl $t {
            pub fn order_count(&self) -> usize {
                self.values.len()
            }

            pub fn values(&self) -> &[f64] {
                &self.values
            }

            pub fn into_vec(self) -> Vec<f64> {
                self.values
            }
        }

        impl std::ops::Index<usize> for $t {
            type Output = f64;
            fn index(&self, i: usize) -> &f64 {
                &self.values[i]
            }
        }
    };
}

basis_accessors!(BasisVector);
basis_accessors!(BasisDerivVector);

fn check_args(w: f64, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("truncation level k must be at least 1"));
    }
    if !w.is_finite() {
        return Err(Error::invalid(format!("basis evaluated at non-finite point {w}")));
    }
    Ok(())
}

pub fn eval_basis(w: f64, k: usize) -> Result<BasisVector> {
    check_args(w, k)?;
    let mut values = vec![0.0; k];
    fill_basis(w, &mut values);
    Ok(BasisVector { values })
}

pub fn eval_basis_deriv(w: f64, k: usize) -> Result<BasisDerivVector> {
    check_args(w, k)?;
    let mut h = vec![0.0; k];
    fill_basis(w, &mut h);
    let mut values = vec![0.0; k];
    fill_deriv_from(&h, &mut values);
    Ok(BasisDerivVector { values })
}

/// Writes `h_0(w), ..., h_{len-1}(w)` into `out`.
#[inline]
pub(crate) fn fill_basis(w: f64, out: &mut [f64]) {
    let k = out.len();
    if k == 0 {
        return;
    }
    out[0] = 1.0;
    if k == 1 {
        return;
    }
    out[1] = w;
    for m in 1..k - 1 {
        let mf = m as f64;
        out[m + 1] = (w * out[m] - mf.sqrt() * out[m - 1]) / (mf + 1.0).sqrt();
    }
}

/// First derivatives from already-computed basis values of the same length.
#[inline]
pub(crate) fn fill_deriv_from(h: &[f64], out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 0.0;
    for m in 1..out.len() {
        out[m] = (m as f64).sqrt() * h[m - 1];
    }
}

/// Second derivatives: `h_m'' = sqrt(m (m-1)) h_{m-2}`.
#[cfg(test)]
pub(crate) fn fill_second_deriv_from(h: &[f64], out: &mut [f64]) {
    for (m, o) in out.iter_mut().enumerate() {
        *o = if m < 2 {
            0.0
        } else {
            ((m * (m - 1)) as f64).sqrt() * h[m - 2]
        };
    }
}

/// `g(w) = Σ c_j h_j(w)` together with `g'(w)` and `g''(w)`.
///
/// `scratch` must have length `coeffs.len()`.
#[inline]
pub(crate) fn link_with_derivs(w: f64, coeffs: &[f64], scratch: &mut [f64]) -> (f64, f64, f64) {
    fill_basis(w, scratch);
    let mut g = 0.0;
    let mut g1 = 0.0;
    let mut g2 = 0.0;
    for (m, &c) in coeffs.iter().enumerate() {
        g += c * scratch[m];
        if m >= 1 {
            g1 += c * (m as f64).sqrt() * scratch[m - 1];
        }
        if m >= 2 {
            g2 += c * ((m * (m - 1)) as f64).sqrt() * scratch[m - 2];
        }
    }
    (g, g1, g2)
}

/// Evaluates the truncated expansion `Σ c_j h_j(w)`.
pub fn eval_link(w: f64, coeffs: &[f64]) -> f64 {
    let mut scratch = vec![0.0; coeffs.len()];
    link_with_derivs(w, coeffs, &mut scratch).0
}

/// Gauss–Hermite rule for `∫ f(w) exp(-w^2/2) dw`.
#[derive(Debug, Clone)]
pub struct GaussHermiteRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermiteRule {
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &wt)| wt * f(x))
            .sum()
    }

    fn compute(n: usize) -> Self {
        // Jacobi matrix of the monic probabilists' recurrence: zero diagonal,
        // off-diagonal sqrt(m).
        let jacobi = DMatrix::from_fn(n, n, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64).sqrt()
            } else {
                0.0
            }
        });
        let mut nodes: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
        nodes.sort_by(f64::total_cmp);

        let mut h = vec![0.0; n + 1];
        for x in nodes.iter_mut() {
            // Newton polish on h_n; eigenvalues are already close.
            for _ in 0..3 {
                fill_basis(*x, &mut h);
                let step = h[n] / ((n as f64).sqrt() * h[n - 1]);
                if !step.is_finite() {
                    break;
                }
                *x -= step;
            }
        }
        // Christoffel weights: 1 / Σ_{j<n} h_j(x)^2 for the standard normal
        // measure, scaled by sqrt(2π) for the unnormalized weight.
        let weights = nodes
            .iter()
            .map(|&x| {
                fill_basis(x, &mut h[..n]);
                let s: f64 = h[..n].iter().map(|v| v * v).sum();
                (2.0 * PI).sqrt() / s
            })
            .collect();
        Self { nodes, weights }
    }
}

static RULES: OnceLock<RwLock<HashMap<usize, Arc<GaussHermiteRule>>>> = OnceLock::new();

/// Cached `n`-point Gauss–Hermite rule.
pub fn gauss_hermite(n: usize) -> Result<Arc<GaussHermiteRule>> {
    if n < 2 {
        return Err(Error::invalid("Gauss-Hermite rule needs at least 2 nodes"));
    }
    let cache = RULES.get_or_init(|| RwLock::new(HashMap::new()));
    if let Some(rule) = cache.read().expect("rule cache poisoned").get(&n) {
        return Ok(Arc::clone(rule));
    }
    let rule = Arc::new(GaussHermiteRule::compute(n));
    let mut guard = cache.write().expect("rule cache poisoned");
    Ok(Arc::clone(guard.entry(n).or_insert(rule)))
}

/// Quadrature value of `∫ h_m(w) h_n(w) exp(-w^2/2) dw`; equals
/// `sqrt(2π) δ_mn` for an exact rule.
pub fn gram_check(m: usize, n: usize, quadrature_nodes: usize) -> Result<f64> {
    let top = m.max(n);
    if top > 40 {
        return Err(Error::invalid(format!("degree {top} exceeds 40")));
    }
    if quadrature_nodes < 2 * top + 10 {
        return Err(Error::invalid(format!(
            "{quadrature_nodes} nodes is too few for degrees ({m}, {n}); need {}",
            2 * top + 10
        )));
    }
    let rule = gauss_hermite(quadrature_nodes)?;
    let mut h = vec![0.0; top + 1];
    Ok(rule.integrate(|x| {
        fill_basis(x, &mut h);
        h[m] * h[n]
    }))
}
