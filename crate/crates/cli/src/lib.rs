//! Batch driver behind the `siate` binary: CSV in, JSON/CSV/text/SVG out.

pub mod config;
pub mod json;

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use siate_core::bootstrap::{link_curve, MultiplierLaw};
use siate_core::effects::{estimate_effects, AteEstimate, EffectsReport, KPolicy};
use siate_core::index::fit_single_index;
use siate_core::io::{load_csv, LoadedData};
use siate_core::sim::{run_study, StudyConfig};
use siate_core::truncation::{default_candidates, default_folds, default_k, select_k};
use siate_core::Dataset;

pub use config::{Cli, CommandKind, CommandLine, Flags, KChoice, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        source: siate_core::Error,
    },
    #[error("load {}: {source}", path.display())]
    Load {
        path: PathBuf,
        source: siate_core::Error,
    },
    #[error("output {}: {source}", path.display())]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    fn stage(stage: &'static str) -> impl FnOnce(siate_core::Error) -> Self {
        move |source| CliError::Stage { stage, source }
    }

    /// Process exit status: 2 for unusable configuration, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

/// Files produced by one command, in the order written.
#[derive(Debug, Default)]
struct Outputs {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn open(dir: &Path) -> Result<Self, CliError> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).map_err(|source| CliError::Write {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        self.files.push(path.clone());
        fs::write(&path, contents).map_err(|source| CliError::Write { path, source })
    }

    fn discard(self) {
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

/// Runs one command on a pool of `config.threads` workers. On failure every
/// file this run created is removed.
pub fn run_command(config: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.max(1))
        .build()
        .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    pool.install(|| {
        let artifacts = match config.command {
            CommandKind::Estimate => estimate_artifacts(config)?,
            CommandKind::Cv => cv_artifacts(config)?,
            CommandKind::Simulate => simulate_artifacts(config)?,
            CommandKind::LinkPlot => link_plot_artifacts(config)?,
        };
        let mut out = Outputs::open(&config.output_dir)?;
        for (name, body) in &artifacts {
            if let Err(e) = out.write(name, body) {
                out.discard();
                return Err(e);
            }
        }
        Ok(out.files)
    })
}

fn load(config: &RunConfig) -> Result<(LoadedData, Dataset), CliError> {
    let path = config.input_path.as_ref().expect("validated");
    let columns = config.column_map.as_ref().expect("validated");
    let loaded = load_csv(path, columns).map_err(|source| CliError::Load {
        path: path.clone(),
        source,
    })?;
    let data = if config.standardize_covariates {
        loaded.data.standardized()
    } else {
        loaded.data.clone()
    };
    Ok((loaded, data))
}

fn k_policy(config: &RunConfig, n: usize) -> KPolicy {
    match &config.k_choice {
        KChoice::Fixed(k) => KPolicy::Fixed(*k),
        KChoice::Auto => KPolicy::DefaultRule,
        KChoice::CrossValidate { candidates, folds, mode } => KPolicy::CrossValidate {
            candidates: candidates.clone().unwrap_or_else(|| default_candidates(n)),
            folds: folds.unwrap_or_else(|| default_folds(n)),
            mode: *mode,
            seed: config.seed,
        },
    }
}

fn policy_label(p: &KPolicy) -> &'static str {
    match p {
        KPolicy::Fixed(_) => "fixed",
        KPolicy::DefaultRule => "default_rule",
        KPolicy::CrossValidate { .. } => "cross_validate",
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable report")
}

fn timestamp_line(config: &RunConfig) -> String {
    if !config.timestamp {
        return String::new();
    }
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    format!("# generated at unix time {secs}\n")
}

fn cv_value(cv: &siate_core::CvResult, seed: u64) -> Value {
    let scores: serde_json::Map<String, Value> = cv
        .candidate_scores
        .iter()
        .map(|(k, s)| (k.to_string(), if s.is_finite() { json!(s) } else { Value::Null }))
        .collect();
    let failures: serde_json::Map<String, Value> =
        cv.failures.iter().map(|(k, f)| (k.to_string(), json!(f))).collect();
    json!({
        "chosen_k": cv.chosen_k,
        "candidate_scores": scores,
        "failures": failures,
        "mode": to_value(&cv.mode),
        "folds": cv.folds,
        "seed": seed,
    })
}

fn estimate_json(config: &RunConfig, loaded: &LoadedData, data: &Dataset, policy: &KPolicy, r: &EffectsReport) -> Value {
    let columns = config.column_map.as_ref().expect("validated");
    json!({
        "command": "estimate",
        "input": config.input_path.as_ref().map(|p| p.display().to_string()),
        "outcome": columns.outcome,
        "treatment": columns.treatment,
        "covariates": columns.covariates,
        "n_used": data.len(),
        "dim": data.dim(),
        "rejected_rows": to_value(&loaded.rejected),
        "standardized": config.standardize_covariates,
        "k": r.model.truncation(),
        "k_policy": policy_label(policy),
        "theta": r.model.theta().as_slice(),
        "coefficients": r.model.coeffs().as_slice(),
        "loglik": r.model.loglik(),
        "iterations": r.model.iterations(),
        "converged": r.model.converged(),
        "separated": r.model.separated(),
        "ci_level": config.ci_level,
        "trim": config.trim,
        "seed": config.seed,
        "weighted_ate": to_value(&r.weighted_ate),
        "ate": to_value(&r.ate),
        "cv": r.cv.as_ref().map_or(Value::Null, |cv| cv_value(cv, config.seed)),
    })
}

fn estimate_text(config: &RunConfig, data: &Dataset, policy: &KPolicy, r: &EffectsReport) -> String {
    let mut s = timestamp_line(config);
    let theta: Vec<String> = r.model.theta().iter().map(|v| format!("{v:.4}")).collect();
    s.push_str(&format!(
        "N = {}, d = {}, k = {} ({}), converged = {}\ntheta = ({})\n\n",
        data.len(),
        data.dim(),
        r.model.truncation(),
        policy_label(policy),
        r.model.converged(),
        theta.join(", ")
    ));
    let ci = format!("{:.0}% CI", 100.0 * config.ci_level);
    s.push_str(&format!(
        "{:<14} {:>10} {:>10} {:>10} {:>8}  {:<24} {:>6}\n",
        "Estimator", "Point", "Std", "Z", "p", ci, "Trim"
    ));
    let row = |e: &AteEstimate| {
        format!(
            "{:<14} {:>10.4} {:>10.4} {:>10.3} {:>8.4}  [{:>9.4}, {:>9.4}]   {:>6}\n",
            e.estimand.label(),
            e.point,
            e.std_error,
            e.z_stat,
            e.p_value,
            e.ci_lower,
            e.ci_upper,
            e.trim_count
        )
    };
    s.push_str(&row(&r.weighted_ate));
    s.push_str(&row(&r.ate));
    s
}

fn estimate_artifacts(config: &RunConfig) -> Result<Vec<(String, String)>, CliError> {
    let (loaded, data) = load(config)?;
    let policy = k_policy(config, data.len());
    let report = estimate_effects(&data, &policy, &config.fit, config.ci_level, config.trim)
        .map_err(CliError::stage("estimate"))?;
    Ok(vec![
        ("report.json".into(), json::to_string_17(&estimate_json(config, &loaded, &data, &policy, &report))),
        ("report.txt".into(), estimate_text(config, &data, &policy, &report)),
    ])
}

fn cv_artifacts(config: &RunConfig) -> Result<Vec<(String, String)>, CliError> {
    let (_, data) = load(config)?;
    let KPolicy::CrossValidate { candidates, folds, mode, seed } = k_policy(config, data.len()) else {
        return Err(CliError::config("cv requires a candidate set"));
    };
    let cv = select_k(&data, &candidates, mode, folds, seed, &config.fit)
        .map_err(CliError::stage("truncation selection"))?;
    let mut v = cv_value(&cv, seed);
    v["candidates"] = json!(candidates);
    v["n_used"] = json!(data.len());
    Ok(vec![("cv.json".into(), json::to_string_17(&v))])
}

fn simulate_artifacts(config: &RunConfig) -> Result<Vec<(String, String)>, CliError> {
    let largest = config.sample_sizes.iter().copied().max().unwrap_or(0);
    let k_policy = match &config.k_choice {
        KChoice::CrossValidate { candidates, folds, mode } => KPolicy::CrossValidate {
            candidates: candidates.clone().unwrap_or_else(|| default_candidates(largest)),
            folds: folds.unwrap_or(10),
            mode: *mode,
            seed: config.seed,
        },
        _ => k_policy(config, largest),
    };
    let study = StudyConfig {
        settings: config.settings.clone(),
        sample_sizes: config.sample_sizes.clone(),
        replications: config.replications,
        estimators: config.estimators.clone(),
        k_policy,
        seed: config.seed,
        parallelism: config.threads,
        opts: config.fit,
        ci_level: config.ci_level,
        trim: config.trim,
        theta_cov_variant: Default::default(),
    };
    let summary = run_study(&study).map_err(CliError::stage("simulate"))?;
    let mut text = timestamp_line(config);
    text.push_str(&summary.to_text());
    Ok(vec![("study.csv".into(), summary.to_csv()), ("study.txt".into(), text)])
}

fn link_plot_artifacts(config: &RunConfig) -> Result<Vec<(String, String)>, CliError> {
    let (_, data) = load(config)?;
    let policy = k_policy(config, data.len());
    let k = match &policy {
        KPolicy::Fixed(k) => *k,
        KPolicy::DefaultRule => default_k(data.len()),
        KPolicy::CrossValidate { candidates, folds, mode, seed } => {
            select_k(&data, candidates, *mode, *folds, *seed, &config.fit)
                .map_err(CliError::stage("truncation selection"))?
                .chosen_k
        }
    };
    let model = fit_single_index(&data, k, &config.fit).map_err(CliError::stage("propensity fit"))?;
    let curve = link_curve(
        &data,
        &model,
        config.grid,
        config.bootstrap_b,
        config.ci_level,
        config.seed,
        &config.fit,
        MultiplierLaw::Exponential,
    )
    .map_err(CliError::stage("link curve"))?;
    let summary = json!({
        "k": k,
        "theta": model.theta().as_slice(),
        "coefficients": model.coeffs().as_slice(),
        "conf_level": curve.conf_level,
        "replications": curve.replications,
        "failed_replicates": curve.failed_replicates,
        "quad_coeffs": curve.quad_coeffs,
        "quad_std_errors": curve.quad_std_errors,
        "quad_ols_std_errors": curve.quad_ols_std_errors,
        "seed": config.seed,
    });
    Ok(vec![
        ("curve.csv".into(), curve.to_csv()),
        ("curve.svg".into(), curve.to_svg()),
        ("curve.json".into(), json::to_string_17(&summary)),
    ])
}
