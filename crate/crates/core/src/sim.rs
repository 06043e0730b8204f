//! Synthetic designs and Monte Carlo replication studies.
//!
//! Every design draws covariates, a binary treatment whose propensity
//! depends on the covariates, and the outcome `Y = β_d D + Σ_j X_j + ε`
//! with `β_d = 1`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Dataset;
use crate::effects::{baseline_estimate, effects_from_propensity, BaselineMethod, KPolicy};
use crate::error::{Error, Result};
use crate::index::{
    estimate_theta_cov, fit_single_index, predict_propensity, CovarianceVariant, FitOptions,
};
use crate::logistic::sigmoid;
use crate::truncation::{default_k, select_k};

/// Median of the chi-square distribution with one degree of freedom.
pub const CHI2_1_MEDIAN: f64 = 0.454_936_423_1;

/// Cauchy covariates are clamped to this magnitude.
pub const CAUCHY_CAP: f64 = 1e6;

macro_rules! setting_ids {
    ($($variant:ident => $label:literal),+ $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum SettingId { $($variant),+ }

        impl SettingId {
            pub const ALL: &'static [SettingId] = &[$(SettingId::$variant),+];

            pub fn label(self) -> &'static str {
                match self { $(SettingId::$variant => $label),+ }
            }
        }

        impl FromStr for SettingId {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_uppercase().as_str() {
                    $($label => Ok(SettingId::$variant),)+
                    other => Err(Error::invalid(format!("unknown setting id {other:?}"))),
                }
            }
        }
    };
}

setting_ids! {
    S1A => "1A", S1B => "1B", S2A => "2A", S2B => "2B",
    S3A => "3A", S3B => "3B", S4A => "4A", S4B => "4B",
    S5A => "5A", S5B => "5B", S5C => "5C", S5D => "5D",
    S7A => "7A", S7B => "7B", S8A => "8A", S8B => "8B",
    S9A => "9A", S9B => "9B", S10A => "10A", S10B => "10B",
    S11A => "11A", S11B => "11B", S12A => "12A", S12B => "12B",
}

impl fmt::Display for SettingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    /// `sin(w)`
    Sine,
    /// `0.5 (w³ - w)`
    Cubic,
    /// `10 exp(w)`
    Exp,
    /// `10 (w⁵ - w³) + 10 exp(w)`
    QuinticExp,
    /// `2 X_1 X_2`, not a single index.
    Bilinear,
    /// `D = 1{w + ε > 0}`
    ProbitThreshold,
    /// `D = 1{w³ + w² + w + ε > 0}`
    CubicThreshold,
    /// `D = 1{2 X_1 X_2 + ε > 0}`
    BilinearThreshold,
}

impl LinkKind {
    pub fn is_threshold(self) -> bool {
        matches!(
            self,
            LinkKind::ProbitThreshold | LinkKind::CubicThreshold | LinkKind::BilinearThreshold
        )
    }

    /// The latent argument: the logistic argument for Λ-type designs, the
    /// threshold argument otherwise.
    fn latent(self, w: f64, x: &[f64]) -> f64 {
        match self {
            LinkKind::Sine => w.sin(),
            LinkKind::Cubic => 0.5 * (w.powi(3) - w),
            LinkKind::Exp => 10.0 * w.exp(),
            LinkKind::QuinticExp => 10.0 * (w.powi(5) - w.powi(3)) + 10.0 * w.exp(),
            LinkKind::Bilinear | LinkKind::BilinearThreshold => 2.0 * x[0] * x[1],
            LinkKind::ProbitThreshold => w,
            LinkKind::CubicThreshold => w.powi(3) + w.powi(2) + w,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateLaw {
    StandardNormal,
    Cauchy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeNoise {
    Normal,
    /// `χ²₁` minus its median.
    Chi2Recentered,
    Cauchy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSetting {
    pub id: SettingId,
    pub dim: usize,
    /// `None` for the bilinear designs, which have no index.
    pub theta0: Option<Vec<f64>>,
    pub link_kind: LinkKind,
    pub covariate_law: CovariateLaw,
    pub outcome_noise: OutcomeNoise,
    pub beta_d: f64,
}

const THETA_2D: [f64; 2] = [0.8, -0.6];
const THETA_2D_OFF: [f64; 2] = [0.5, -0.5];

fn theta_6d() -> Vec<f64> {
    vec![0.2f64.sqrt(), 0.3f64.sqrt(), 0.25f64.sqrt(), -(0.1f64.sqrt()), 0.08f64.sqrt(), -(0.07f64.sqrt())]
}

fn theta_6d_off() -> Vec<f64> {
    vec![0.2f64.sqrt(), 0.4f64.sqrt(), 0.6f64.sqrt(), -(0.25f64.sqrt()), 0.1f64.sqrt(), -(0.45f64.sqrt())]
}

impl SimulationSetting {
    pub fn get(id: SettingId) -> Self {
        use LinkKind::*;
        use SettingId::*;
        let (theta0, link_kind): (Option<Vec<f64>>, LinkKind) = match id {
            S1A | S5A | S9A => (Some(THETA_2D.to_vec()), Sine),
            S1B | S5B | S9B => (Some(THETA_2D.to_vec()), Cubic),
            S2A | S7A => (Some(THETA_2D_OFF.to_vec()), Sine),
            S2B | S7B => (Some(THETA_2D_OFF.to_vec()), Cubic),
            S3A | S5C => (Some(theta_6d()), Sine),
            S3B | S5D => (Some(theta_6d()), Cubic),
            S4A => (Some(theta_6d_off()), Sine),
            S4B => (Some(theta_6d_off()), Cubic),
            S8A => (Some(THETA_2D.to_vec()), ProbitThreshold),
            S8B => (Some(THETA_2D.to_vec()), CubicThreshold),
            S10A => (None, Bilinear),
            S10B => (None, BilinearThreshold),
            S11A | S12A => (Some(THETA_2D.to_vec()), Exp),
            S11B | S12B => (Some(THETA_2D.to_vec()), QuinticExp),
        };
        let dim = theta0.as_ref().map_or(2, Vec::len);
        let covariate_law = match id {
            S12A | S12B => CovariateLaw::Cauchy,
            _ => CovariateLaw::StandardNormal,
        };
        let outcome_noise = match id {
            S9A => OutcomeNoise::Chi2Recentered,
            S9B => OutcomeNoise::Cauchy,
            _ => OutcomeNoise::Normal,
        };
        Self {
            id,
            dim,
            theta0,
            link_kind,
            covariate_law,
            outcome_noise,
            beta_d: 1.0,
        }
    }

    /// `θ0 / ‖θ0‖`, the estimable direction.
    pub fn theta0_normalized(&self) -> Option<DVector<f64>> {
        self.theta0
            .as_ref()
            .map(|t| DVector::from_column_slice(t).normalize())
    }

    /// True conditional treatment probability at covariate row `x`.
    pub fn true_propensity(&self, x: &[f64]) -> f64 {
        let w = self
            .theta0
            .as_ref()
            .map_or(0.0, |t| t.iter().zip(x).map(|(a, b)| a * b).sum());
        let z = self.link_kind.latent(w, x);
        if self.link_kind.is_threshold() {
            Normal::standard().cdf(z)
        } else {
            sigmoid(z)
        }
    }
}

/// Quantities known only to the simulator.
#[derive(Debug, Clone)]
pub struct Truth {
    pub propensity: DVector<f64>,
    pub theta0: Option<DVector<f64>>,
    pub beta_d: f64,
    /// Cauchy covariate draws clamped to `±CAUCHY_CAP`.
    pub capped: usize,
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub data: Dataset,
    pub truth: Truth,
}

/// Draws one dataset; a pure function of `(setting, n, seed)`.
pub fn generate_dataset(setting: &SimulationSetting, n: usize, seed: u64) -> Result<SimulatedData> {
    if n < 10 {
        return Err(Error::invalid(format!("sample size {n} below 10")));
    }
    let d = setting.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut capped = 0usize;
    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            x[(i, j)] = match setting.covariate_law {
                CovariateLaw::StandardNormal => rng.sample(StandardNormal),
                CovariateLaw::Cauchy => {
                    let v: f64 = Cauchy::new(0.0, 1.0).expect("valid cauchy").sample(&mut rng);
                    if v.abs() > CAUCHY_CAP {
                        capped += 1;
                    }
                    v.clamp(-CAUCHY_CAP, CAUCHY_CAP)
                }
            };
        }
    }
    let mut row = vec![0.0; d];
    let mut propensity = DVector::zeros(n);
    let mut treat = DVector::zeros(n);
    for i in 0..n {
        for j in 0..d {
            row[j] = x[(i, j)];
        }
        propensity[i] = setting.true_propensity(&row);
        treat[i] = if setting.link_kind.is_threshold() {
            let w = setting
                .theta0
                .as_ref()
                .map_or(0.0, |t| t.iter().zip(&row).map(|(a, b)| a * b).sum());
            let eps: f64 = rng.sample(StandardNormal);
            (setting.link_kind.latent(w, &row) + eps > 0.0) as u8 as f64
        } else {
            (rng.random::<f64>() < propensity[i]) as u8 as f64
        };
    }
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let noise: f64 = match setting.outcome_noise {
            OutcomeNoise::Normal => rng.sample(StandardNormal),
            OutcomeNoise::Chi2Recentered => {
                ChiSquared::new(1.0).expect("valid chi2").sample(&mut rng) - CHI2_1_MEDIAN
            }
            OutcomeNoise::Cauchy => Cauchy::new(0.0, 1.0).expect("valid cauchy").sample(&mut rng),
        };
        y[i] = setting.beta_d * treat[i] + x.row(i).sum() + noise;
    }
    let data = Dataset::new(y, treat, x)?;
    Ok(SimulatedData {
        data,
        truth: Truth {
            propensity,
            theta0: setting.theta0.as_ref().map(|t| DVector::from_column_slice(t)),
            beta_d: setting.beta_d,
            capped,
        },
    })
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `r` in cell `(setting, n)`: a splitmix64 chain over
/// the master seed, the setting label bytes, `n` and `r`.
pub fn replication_seed(master: u64, setting: SettingId, n: usize, r: usize) -> u64 {
    let mut h = splitmix64(master);
    for b in setting.label().bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    h = splitmix64(h ^ n as u64);
    splitmix64(h ^ r as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyEstimator {
    /// Weighted ATE with single-index propensities.
    WeightedAte,
    /// ATE with single-index propensities.
    Ate,
    /// Per-coordinate index recovery against `θ0 / ‖θ0‖`.
    Theta,
    NaiveDiff,
    IpwLogistic,
    RegressionAdjust,
    /// Weighted ATE with the true propensity.
    OracleWeightedAte,
    /// ATE with the true propensity.
    OracleAte,
}

impl StudyEstimator {
    pub fn label(self) -> &'static str {
        match self {
            StudyEstimator::WeightedAte => "weighted_ate",
            StudyEstimator::Ate => "ate",
            StudyEstimator::Theta => "theta",
            StudyEstimator::NaiveDiff => "naive_diff",
            StudyEstimator::IpwLogistic => "ipw_logistic",
            StudyEstimator::RegressionAdjust => "regression_adjust",
            StudyEstimator::OracleWeightedAte => "oracle_weighted_ate",
            StudyEstimator::OracleAte => "oracle_ate",
        }
    }

    fn uses_model(self) -> bool {
        matches!(self, StudyEstimator::WeightedAte | StudyEstimator::Ate | StudyEstimator::Theta)
    }
}

impl FromStr for StudyEstimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        use StudyEstimator::*;
        [WeightedAte, Ate, Theta, NaiveDiff, IpwLogistic, RegressionAdjust, OracleWeightedAte, OracleAte]
            .into_iter()
            .find(|e| e.label() == s.trim())
            .ok_or_else(|| Error::invalid(format!("unknown estimator {s:?}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub settings: Vec<SettingId>,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub estimators: Vec<StudyEstimator>,
    pub k_policy: KPolicy,
    pub seed: u64,
    pub parallelism: usize,
    pub opts: FitOptions,
    pub ci_level: f64,
    pub trim: f64,
    /// Plug-in used for the θ interval coverage column.
    #[serde(default)]
    pub theta_cov_variant: CovarianceVariant,
}

impl StudyConfig {
    pub fn new(settings: Vec<SettingId>, sample_sizes: Vec<usize>, replications: usize) -> Self {
        Self {
            settings,
            sample_sizes,
            replications,
            estimators: vec![StudyEstimator::WeightedAte],
            k_policy: KPolicy::DefaultRule,
            seed: 0,
            parallelism: 1,
            opts: FitOptions::default(),
            ci_level: 0.95,
            trim: 0.0,
            theta_cov_variant: CovarianceVariant::Unweighted,
        }
    }
}

/// One estimate from one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub estimate: f64,
    pub truth: f64,
    pub covered: Option<bool>,
}

/// All replications of one `(setting, N)` cell, keyed by row label
/// (`theta` expands to `theta_1`, `theta_2`, ...). `None` marks a failed
/// replication.
#[derive(Debug, Clone, Default)]
pub struct CellDraws {
    pub draws: BTreeMap<String, Vec<Option<Draw>>>,
    /// Per-replication fitted index vectors, when a model was fitted.
    pub thetas: Vec<Option<DVector<f64>>>,
}

fn replicate(
    setting: &SimulationSetting,
    n: usize,
    r: usize,
    cfg: &StudyConfig,
) -> (Vec<(String, Option<Draw>)>, Option<DVector<f64>>) {
    let seed = replication_seed(cfg.seed, setting.id, n, r);
    let mut out = Vec::new();
    let theta_labels = |dim: usize| (1..=dim).map(|j| format!("theta_{j}")).collect::<Vec<_>>();
    let sim = match generate_dataset(setting, n, seed) {
        Ok(sim) => sim,
        Err(_) => {
            for e in &cfg.estimators {
                if *e == StudyEstimator::Theta {
                    if setting.theta0.is_some() {
                        out.extend(theta_labels(setting.dim).into_iter().map(|l| (l, None)));
                    }
                } else {
                    out.push((e.label().to_string(), None));
                }
            }
            return (out, None);
        }
    };
    let data = &sim.data;
    let needs_model = cfg.estimators.iter().any(|e| e.uses_model());
    let fitted = needs_model.then(|| {
        let k = match &cfg.k_policy {
            KPolicy::Fixed(k) => Ok(*k),
            KPolicy::DefaultRule => Ok(default_k(n)),
            KPolicy::CrossValidate { candidates, folds, mode, .. } => {
                select_k(data, candidates, *mode, (*folds).min(n), seed, &cfg.opts).map(|cv| cv.chosen_k)
            }
        };
        k.and_then(|k| fit_single_index(data, k, &cfg.opts))
            .ok()
            .filter(|m| m.converged())
    });
    let model = fitted.flatten();
    let pi_hat = model
        .as_ref()
        .and_then(|m| predict_propensity(m, data.covariates(), cfg.opts.prop_clip).ok());
    let effects = pi_hat
        .as_ref()
        .and_then(|pi| effects_from_propensity(data, pi, cfg.ci_level, cfg.trim).ok());
    let oracle_pi = sim
        .truth
        .propensity
        .map(|p| p.clamp(cfg.opts.prop_clip, 1.0 - cfg.opts.prop_clip));
    let oracle = effects_from_propensity(data, &oracle_pi, cfg.ci_level, cfg.trim).ok();
    let beta = sim.truth.beta_d;
    let from = |est: &crate::effects::AteEstimate| Draw {
        estimate: est.point,
        truth: beta,
        covered: Some(est.covers(beta)),
    };

    for e in &cfg.estimators {
        match e {
            StudyEstimator::WeightedAte => out.push((e.label().into(), effects.as_ref().map(|x| from(&x.0)))),
            StudyEstimator::Ate => out.push((e.label().into(), effects.as_ref().map(|x| from(&x.1)))),
            StudyEstimator::OracleWeightedAte => out.push((e.label().into(), oracle.as_ref().map(|x| from(&x.0)))),
            StudyEstimator::OracleAte => out.push((e.label().into(), oracle.as_ref().map(|x| from(&x.1)))),
            StudyEstimator::NaiveDiff | StudyEstimator::IpwLogistic | StudyEstimator::RegressionAdjust => {
                let method = match e {
                    StudyEstimator::NaiveDiff => BaselineMethod::NaiveDiff,
                    StudyEstimator::IpwLogistic => BaselineMethod::IpwLogistic,
                    _ => BaselineMethod::RegressionAdjust,
                };
                let draw = baseline_estimate(data, method, cfg.ci_level).ok().map(|x| from(&x));
                out.push((e.label().into(), draw));
            }
            StudyEstimator::Theta => {
                let Some(target) = setting.theta0_normalized() else {
                    continue;
                };
                let labels = theta_labels(setting.dim);
                match &model {
                    None => out.extend(labels.into_iter().map(|l| (l, None))),
                    Some(m) => {
                        let se = estimate_theta_cov(data, m, cfg.theta_cov_variant, cfg.opts.prop_clip)
                            .ok()
                            .map(|c| c.theta_cov(n).diagonal().map(|v| v.max(0.0).sqrt()));
                        let z = crate::effects::normal_critical(cfg.ci_level);
                        for (j, l) in labels.into_iter().enumerate() {
                            let est = m.theta()[j];
                            let covered = se.as_ref().map(|s| (est - target[j]).abs() <= z * s[j]);
                            out.push((l, Some(Draw { estimate: est, truth: target[j], covered })));
                        }
                    }
                }
            }
        }
    }
    (out, model.map(|m| m.theta().clone()))
}

/// Runs `replications` independent replications of one cell on the current
/// rayon pool. Output order is the replication order regardless of thread
/// scheduling.
pub fn simulate_cell(setting: SettingId, n: usize, cfg: &StudyConfig) -> CellDraws {
    let spec = SimulationSetting::get(setting);
    let reps: Vec<_> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| replicate(&spec, n, r, cfg))
        .collect();
    let mut cell = CellDraws::default();
    for (rows, theta) in reps {
        for (label, draw) in rows {
            cell.draws.entry(label).or_default().push(draw);
        }
        cell.thetas.push(theta);
    }
    cell
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub setting: SettingId,
    pub n: usize,
    pub estimator: String,
    /// Successful replications.
    pub replications: usize,
    pub bias: f64,
    /// Sample standard deviation (divisor `reps - 1`).
    pub std: f64,
    /// `sqrt(bias² + std²)`.
    pub rmse: f64,
    /// Share of intervals covering the truth; NaN when unavailable.
    pub coverage_95: f64,
    pub failures: usize,
    /// More than 10% of replications failed.
    pub flagged: bool,
}

impl StudyRow {
    pub fn from_draws(setting: SettingId, n: usize, estimator: &str, draws: &[Option<Draw>]) -> Self {
        let ok: Vec<&Draw> = draws.iter().flatten().collect();
        let failures = draws.len() - ok.len();
        let m = ok.len() as f64;
        let errs: Vec<f64> = ok.iter().map(|d| d.estimate - d.truth).collect();
        let bias = errs.iter().sum::<f64>() / m;
        let std = if ok.len() > 1 {
            (errs.iter().map(|e| (e - bias).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
        } else {
            f64::NAN
        };
        let covered: Vec<bool> = ok.iter().filter_map(|d| d.covered).collect();
        let coverage_95 = if covered.is_empty() {
            f64::NAN
        } else {
            covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64
        };
        Self {
            setting,
            n,
            estimator: estimator.to_string(),
            replications: ok.len(),
            bias,
            std,
            rmse: (bias * bias + std * std).sqrt(),
            coverage_95,
            failures,
            flagged: failures * 10 > draws.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudySummary {
    pub rows: Vec<StudyRow>,
}

/// Runs every `(setting, N)` cell on a dedicated pool of `parallelism`
/// threads. Results do not depend on the thread count.
pub fn run_study(cfg: &StudyConfig) -> Result<StudySummary> {
    cfg.opts.validate()?;
    if cfg.replications == 0 {
        return Err(Error::invalid("replications must be positive"));
    }
    if cfg.settings.is_empty() || cfg.sample_sizes.is_empty() || cfg.estimators.is_empty() {
        return Err(Error::invalid("settings, sample sizes and estimators must be nonempty"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let mut rows = Vec::new();
    pool.install(|| {
        for &setting in &cfg.settings {
            for &n in &cfg.sample_sizes {
                let cell = simulate_cell(setting, n, cfg);
                for (label, draws) in &cell.draws {
                    rows.push(StudyRow::from_draws(setting, n, label, draws));
                }
            }
        }
    });
    Ok(StudySummary { rows })
}

impl StudySummary {
    pub fn row(&self, setting: SettingId, n: usize, estimator: &str) -> Option<&StudyRow> {
        self.rows
            .iter()
            .find(|r| r.setting == setting && r.n == n && r.estimator == estimator)
    }

    /// CSV with header `setting,N,estimator,reps,bias,std,rmse,coverage,failures`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("setting,N,estimator,reps,bias,std,rmse,coverage,failures\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:?},{:?},{:?},{:?},{}\n",
                r.setting, r.n, r.estimator, r.replications, r.bias, r.std, r.rmse, r.coverage_95, r.failures
            ));
        }
        out
    }

    /// Aligned text in Bias / Std / RMSE blocks, one line per cell.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let blocks: [(&str, fn(&StudyRow) -> f64); 4] = [
            ("Bias", |r| r.bias),
            ("Std", |r| r.std),
            ("RMSE", |r| r.rmse),
            ("Coverage95", |r| r.coverage_95),
        ];
        out.push_str(&format!(
            "{:<12} {:>7} {:>6} {:<22} {:>10} {:>6} {:>5}\n",
            "", "Setting", "N", "Estimator", "Value", "Reps", "Fail"
        ));
        for (name, get) in blocks {
            out.push_str(&format!("{name}\n"));
            for r in &self.rows {
                out.push_str(&format!(
                    "{:<12} {:>7} {:>6} {:<22} {:>10.4} {:>6} {:>5}{}\n",
                    "",
                    r.setting.label(),
                    r.n,
                    r.estimator,
                    get(r),
                    r.replications,
                    r.failures,
                    if r.flagged { " *" } else { "" }
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn setting_ids_round_trip() {
        for &id in SettingId::ALL {
            assert_eq!(id.label().parse::<SettingId>().unwrap(), id);
        }
        assert!("6A".parse::<SettingId>().is_err());
        assert_eq!(SettingId::ALL.len(), 24);
    }

    #[test]
    fn unit_norm_settings() {
        use SettingId::*;
        for id in [S1A, S1B, S3A, S3B, S5A, S5B, S5C, S5D, S8A, S8B, S9A, S9B] {
            let t = SimulationSetting::get(id).theta0.unwrap();
            let norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12, "{id}");
        }
        let t4 = SimulationSetting::get(S4A).theta0.unwrap();
        assert!((t4.iter().map(|v| v * v).sum::<f64>() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn five_c_theta() {
        let s = SimulationSetting::get(SettingId::S5C);
        assert_eq!(s.dim, 6);
        let expect = [0.2f64.sqrt(), 0.3f64.sqrt(), 0.5, -(0.1f64.sqrt()), 0.08f64.sqrt(), -(0.07f64.sqrt())];
        for (a, b) in s.theta0.unwrap().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn shapes_and_determinism() {
        for &id in SettingId::ALL {
            let s = SimulationSetting::get(id);
            let a = generate_dataset(&s, 60, 11).unwrap();
            assert_eq!(a.data.len(), 60);
            assert_eq!(a.data.covariates().shape(), (60, s.dim));
            assert!(a.data.treatments().iter().all(|&t| t == 0.0 || t == 1.0));
            let b = generate_dataset(&s, 60, 11).unwrap();
            assert_eq!(a.data, b.data);
        }
        assert!(generate_dataset(&SimulationSetting::get(SettingId::S5A), 9, 0).is_err());
    }

    #[test]
    fn chi2_median_constant() {
        let q = Normal::standard().inverse_cdf(0.75);
        assert!((q * q - CHI2_1_MEDIAN).abs() < 1e-10);
    }

    #[test]
    fn seeds_differ_by_every_field() {
        let base = replication_seed(7, SettingId::S5A, 400, 3);
        assert_ne!(base, replication_seed(8, SettingId::S5A, 400, 3));
        assert_ne!(base, replication_seed(7, SettingId::S5B, 400, 3));
        assert_ne!(base, replication_seed(7, SettingId::S5A, 800, 3));
        assert_ne!(base, replication_seed(7, SettingId::S5A, 400, 4));
        assert_eq!(base, replication_seed(7, SettingId::S5A, 400, 3));
    }

    #[test]
    fn row_statistics_identity() {
        let draws: Vec<Option<Draw>> = [1.1, 0.9, 1.3, f64::NAN, 0.8]
            .iter()
            .map(|&e| (!e.is_nan()).then_some(Draw { estimate: e, truth: 1.0, covered: Some(e < 1.2) }))
            .collect();
        let row = StudyRow::from_draws(SettingId::S5A, 10, "x", &draws);
        assert_eq!(row.replications, 4);
        assert_eq!(row.failures, 1);
        assert!(row.flagged);
        assert!((row.rmse.powi(2) - row.bias.powi(2) - row.std.powi(2)).abs() < 1e-10);
        assert_eq!(row.coverage_95, 0.75);
    }
}
