//! Estimated link curve with a multiplier-bootstrap band and a quadratic
//! summary.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::index::{fit_steps_weighted, FitOptions, Sample, SingleIndexModel};

/// Where the curve is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpec {
    /// `points` values evenly spread over the 2% and 98% quantiles of the
    /// in-sample index.
    Auto { points: usize },
    Explicit { min: f64, max: f64, points: usize },
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Auto { points: 101 }
    }
}

/// Law of the per-observation likelihood weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiplierLaw {
    /// Unit exponential: nonnegative, mean 1, variance 1.
    #[default]
    Exponential,
    /// Every weight equal to 1. Each replicate reproduces the point fit.
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadFit {
    /// Intercept, slope, curvature.
    pub coeffs: [f64; 3],
    pub std_errors: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkCurve {
    pub grid: Vec<f64>,
    pub g_hat: Vec<f64>,
    pub band_lower: Vec<f64>,
    pub band_upper: Vec<f64>,
    pub conf_level: f64,
    pub replications: usize,
    pub failed_replicates: usize,
    /// Quadratic fitted to `(ω_i, ĝ(ω_i))` over the sample index values.
    pub quad_coeffs: [f64; 3],
    /// Bootstrap standard deviation of the replicate quadratic fits.
    pub quad_std_errors: [f64; 3],
    /// Classical OLS standard errors of the point quadratic fit.
    pub quad_ols_std_errors: [f64; 3],
    /// Successful replicate curves on the grid, in replicate order.
    #[serde(skip)]
    pub replicate_curves: Vec<Vec<f64>>,
}

/// Ordinary least squares of `g` on `(1, ω, ω²)`, optionally weighted, with
/// classical standard errors.
pub fn quad_fit(points: &[(f64, f64)], weights: Option<&[f64]>) -> Result<QuadFit> {
    let n = points.len();
    if n < 4 {
        return Err(Error::invalid(format!("quad_fit needs at least 4 points, got {n}")));
    }
    if let Some(w) = weights {
        if w.len() != n || w.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::invalid("weights must be positive and match the points"));
        }
    }
    if points.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::invalid("quad_fit points must be finite"));
    }
    let sw = |i: usize| weights.map_or(1.0, |w| w[i].sqrt());
    let x = DMatrix::from_fn(n, 3, |i, j| sw(i) * points[i].0.powi(j as i32));
    let y = DVector::from_fn(n, |i, _| sw(i) * points[i].1);
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = r.diagonal().amax();
    if !(scale > 0.0) || r.diagonal().iter().any(|v| v.abs() <= scale * 1e-12) {
        return Err(Error::invalid("quad_fit design is rank deficient"));
    }
    let qty = qr.q().tr_mul(&y);
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::invalid("quad_fit design is rank deficient"))?;
    let resid = &y - &x * &beta;
    let s2 = resid.norm_squared() / (n - 3) as f64;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(3, 3))
        .ok_or_else(|| Error::invalid("quad_fit design is rank deficient"))?;
    let cov = &r_inv * r_inv.transpose() * s2;
    Ok(QuadFit {
        coeffs: [beta[0], beta[1], beta[2]],
        std_errors: [cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt(), cov[(2, 2)].sqrt()],
    })
}

/// Type-7 sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn build_grid(spec: GridSpec, index: &DVector<f64>) -> Result<Vec<f64>> {
    let (min, max, points) = match spec {
        GridSpec::Auto { points } => {
            let mut s: Vec<f64> = index.iter().copied().collect();
            s.sort_by(f64::total_cmp);
            (quantile_sorted(&s, 0.02), quantile_sorted(&s, 0.98), points)
        }
        GridSpec::Explicit { min, max, points } => (min, max, points),
    };
    if points < 20 {
        return Err(Error::invalid(format!("grid needs at least 20 points, got {points}")));
    }
    if !(min.is_finite() && max.is_finite() && min < max) {
        return Err(Error::invalid(format!("grid range [{min}, {max}] is empty")));
    }
    let step = (max - min) / (points - 1) as f64;
    Ok((0..points)
        .map(|i| if i + 1 == points { max } else { min + step * i as f64 })
        .collect())
}

/// Seed of bootstrap replicate `b`.
fn replicate_seed(seed: u64, b: usize) -> u64 {
    let mut z = seed ^ (b as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Replicate {
    on_grid: Vec<f64>,
    quad: Option<[f64; 3]>,
}

/// Link curve of `model` on a grid with a pointwise multiplier-bootstrap
/// band from `replications` weighted refits.
#[allow(clippy::too_many_arguments)]
pub fn link_curve(
    data: &Dataset,
    model: &SingleIndexModel,
    grid_spec: GridSpec,
    replications: usize,
    conf_level: f64,
    seed: u64,
    opts: &FitOptions,
    law: MultiplierLaw,
) -> Result<LinkCurve> {
    opts.validate()?;
    if replications < 50 {
        return Err(Error::invalid(format!("need at least 50 replicates, got {replications}")));
    }
    if !(conf_level > 0.0 && conf_level < 1.0) {
        return Err(Error::invalid(format!("confidence level {conf_level} outside (0, 1)")));
    }
    let index = model.index(data.covariates())?;
    let grid = build_grid(grid_spec, &index)?;
    let g_hat: Vec<f64> = grid.iter().map(|&w| model.link(w)).collect();
    let sample_points: Vec<(f64, f64)> = index.iter().map(|&w| (w, model.link(w))).collect();
    let point_quad = quad_fit(&sample_points, None)?;

    let n = data.len();
    let k = model.truncation();
    let reps: Vec<Option<Replicate>> = (0..replications)
        .into_par_iter()
        .map(|b| {
            let weights = match law {
                MultiplierLaw::Exponential => {
                    let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed(seed, b));
                    DVector::from_fn(n, |_, _| Exp1.sample(&mut rng))
                }
                MultiplierLaw::Unit => DVector::from_element(n, 1.0),
            };
            let refit = fit_steps_weighted(Sample::weighted(data, &weights), model.theta(), k, opts);
            if !refit.converged() {
                return None;
            }
            let on_grid = grid.iter().map(|&w| refit.link(w)).collect();
            let pts: Vec<(f64, f64)> = index.iter().map(|&w| (w, refit.link(w))).collect();
            let quad = quad_fit(&pts, None).ok().map(|q| q.coeffs);
            Some(Replicate { on_grid, quad })
        })
        .collect();

    let ok: Vec<&Replicate> = reps.iter().flatten().collect();
    let failed = replications - ok.len();
    if failed * 5 > replications {
        return Err(Error::BootstrapInstability {
            failed,
            total: replications,
        });
    }
    let alpha = 1.0 - conf_level;
    let mut band_lower = Vec::with_capacity(grid.len());
    let mut band_upper = Vec::with_capacity(grid.len());
    let mut column = Vec::with_capacity(ok.len());
    for (gi, &g) in g_hat.iter().enumerate() {
        column.clear();
        column.extend(ok.iter().map(|r| r.on_grid[gi]));
        column.sort_by(f64::total_cmp);
        band_lower.push(quantile_sorted(&column, alpha / 2.0).min(g));
        band_upper.push(quantile_sorted(&column, 1.0 - alpha / 2.0).max(g));
    }

    let quads: Vec<[f64; 3]> = ok.iter().filter_map(|r| r.quad).collect();
    let mut quad_std_errors = [f64::NAN; 3];
    if quads.len() > 1 {
        for (j, se) in quad_std_errors.iter_mut().enumerate() {
            let m = quads.iter().map(|q| q[j]).sum::<f64>() / quads.len() as f64;
            let v = quads.iter().map(|q| (q[j] - m).powi(2)).sum::<f64>() / (quads.len() - 1) as f64;
            *se = v.sqrt();
        }
    }

    Ok(LinkCurve {
        grid,
        g_hat,
        band_lower,
        band_upper,
        conf_level,
        replications,
        failed_replicates: failed,
        quad_coeffs: point_quad.coeffs,
        quad_std_errors,
        quad_ols_std_errors: point_quad.std_errors,
        replicate_curves: ok.into_iter().map(|r| r.on_grid.clone()).collect(),
    })
}

impl LinkCurve {
    /// CSV with header `omega,g_hat,lower,upper`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("omega,g_hat,lower,upper\n");
        for i in 0..self.grid.len() {
            let _ = writeln!(
                out,
                "{:?},{:?},{:?},{:?}",
                self.grid[i], self.g_hat[i], self.band_lower[i], self.band_upper[i]
            );
        }
        out
    }

    /// Self-contained SVG: band, point curve and the fitted quadratic.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (640.0, 420.0, 48.0);
        let x0 = self.grid[0];
        let x1 = *self.grid.last().expect("nonempty grid");
        let quad = |x: f64| self.quad_coeffs[0] + self.quad_coeffs[1] * x + self.quad_coeffs[2] * x * x;
        let ys = self
            .band_lower
            .iter()
            .chain(&self.band_upper)
            .copied()
            .chain(self.grid.iter().map(|&x| quad(x)));
        let (mut y0, mut y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if y1 - y0 < 1e-12 {
            y0 -= 1.0;
            y1 += 1.0;
        }
        let px = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
        let py = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
        let path = |ys: &mut dyn Iterator<Item = (f64, f64)>| {
            ys.map(|(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut band: Vec<(f64, f64)> = self.grid.iter().copied().zip(self.band_upper.iter().copied()).collect();
        band.extend(self.grid.iter().copied().zip(self.band_lower.iter().copied()).rev());

        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r##"<polygon points="{}" fill="#9ecae1" fill-opacity="0.5" stroke="none"/>"##,
            path(&mut band.into_iter())
        );
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#d62728" stroke-dasharray="6 4" stroke-width="1.5"/>"##,
            path(&mut self.grid.iter().map(|&x| (x, quad(x))))
        );
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#08519c" stroke-width="2"/>"##,
            path(&mut self.grid.iter().copied().zip(self.g_hat.iter().copied()))
        );
        let _ = writeln!(
            s,
            r##"<line x1="{pad}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{b}" stroke="black"/>"##,
            b = h - pad,
            r = w - pad
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">index {x0:.3} to {x1:.3}</text>"#,
            w / 2.0,
            h - 12.0
        );
        let _ = writeln!(
            s,
            r#"<text x="12" y="{}" font-size="12" transform="rotate(-90 12 {})" text-anchor="middle">link {y0:.3} to {y1:.3}</text>"#,
            h / 2.0,
            h / 2.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" font-size="13">{:.3} + {:.3} w + {:.3} w^2</text>"#,
            pad, self.quad_coeffs[0], self.quad_coeffs[1], self.quad_coeffs[2]
        );
        s.push_str("</svg>\n");
        s
    }
}
