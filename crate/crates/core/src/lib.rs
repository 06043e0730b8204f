//! Treatment effect estimation with a single-index sieve propensity score.
//!
//! The propensity score is modeled as `Λ(g(X'θ))` with `Λ` logistic, `g`
//! expanded in orthonormal Hermite polynomials and `θ` on the unit sphere.
//! Given fitted propensities, the variance-weighted ATE and the ATE are the
//! slopes of two intercept-free regressions of the outcome on `D - π̂(X)`,
//! with closed-form standard errors.

pub mod bootstrap;
pub mod data;
pub mod effects;
pub mod error;
pub mod hermite;
pub mod index;
pub mod io;
pub mod logistic;
pub mod sim;
pub mod truncation;

pub use bootstrap::{link_curve, quad_fit, GridSpec, LinkCurve, MultiplierLaw, QuadFit};
pub use data::Dataset;
pub use error::{Error, Result};
pub use io::{load_csv, write_csv, ColumnMap, LoadedData};
pub use index::{
    fit_single_index, predict_propensity, CovarianceVariant, FitOptions, SingleIndexModel,
    ThetaCovariance,
};
pub use effects::{
    ate, baseline_estimate, effects_from_propensity, estimate_effects, weighted_ate, AteEstimate,
    BaselineMethod, EffectsReport, Estimand, KPolicy,
};
pub use sim::{
    generate_dataset, run_study, SettingId, SimulationSetting, StudyConfig, StudyEstimator,
    StudySummary,
};
pub use truncation::{default_k, select_k, CvMode, CvResult};
