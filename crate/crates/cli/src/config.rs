//! Command-line grammar, config files and the merged run configuration.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use siate_core::bootstrap::GridSpec;
use siate_core::index::FitOptions;
use siate_core::io::ColumnMap;
use siate_core::sim::{SettingId, StudyEstimator};
use siate_core::truncation::CvMode;

use crate::CliError;

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "SIATE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "siate", version, about = "Single-index propensity score treatment effects")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CommandLine,
}

#[derive(Debug, Subcommand)]
pub enum CommandLine {
    /// Fit the propensity model and estimate both treatment effects.
    Estimate(Flags),
    /// Choose the truncation level by cross-validation.
    Cv(Flags),
    /// Run a Monte Carlo study over simulation settings.
    Simulate(Flags),
    /// Estimated link curve with a bootstrap band.
    LinkPlot(Flags),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Estimate,
    Cv,
    Simulate,
    LinkPlot,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Estimate => "estimate",
            CommandKind::Cv => "cv",
            CommandKind::Simulate => "simulate",
            CommandKind::LinkPlot => "link-plot",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Treatment,
    Outcome,
}

impl From<ModeArg> for CvMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Treatment => CvMode::TreatmentPrediction,
            ModeArg::Outcome => CvMode::OutcomePrediction,
        }
    }
}

/// Flags shared by every subcommand. Each one overrides the same key in
/// `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML file with any of the keys below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub outcome: Option<String>,
    #[arg(long)]
    pub treatment: Option<String>,
    /// Comma-separated covariate column names.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Fixed truncation level.
    #[arg(long, conflicts_with_all = ["k_cv", "k_auto"])]
    pub k: Option<usize>,
    /// Cross-validated truncation level over `a..b` or `a,b,c`.
    #[arg(long = "k-cv", conflicts_with = "k_auto")]
    pub k_cv: Option<String>,
    /// Truncation level ⌊N^(1/5)⌋.
    #[arg(long = "k-auto")]
    pub k_auto: bool,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub trim: Option<f64>,
    #[arg(long)]
    pub ci: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Bootstrap replicates for link-plot.
    #[arg(long)]
    pub boot: Option<usize>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub grid_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub grid_max: Option<f64>,
    /// Standardize covariates before fitting.
    #[arg(long)]
    pub standardize: bool,
    /// Comma-separated setting ids.
    #[arg(long, value_delimiter = ',')]
    pub setting: Option<Vec<String>>,
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Comma-separated study estimators.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Add a timestamp header line to text tables.
    #[arg(long)]
    pub timestamp: bool,
}

/// Keys accepted in a `--config` TOML file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub command: Option<CommandKind>,
    pub input: Option<PathBuf>,
    pub outcome: Option<String>,
    pub treatment: Option<String>,
    pub covariates: Option<Vec<String>>,
    pub k: Option<usize>,
    pub k_cv: Option<String>,
    pub k_auto: Option<bool>,
    pub folds: Option<usize>,
    pub mode: Option<ModeArg>,
    pub trim: Option<f64>,
    pub ci: Option<f64>,
    pub seed: Option<u64>,
    pub boot: Option<usize>,
    pub grid_points: Option<usize>,
    pub grid_min: Option<f64>,
    pub grid_max: Option<f64>,
    pub standardize: Option<bool>,
    pub setting: Option<Vec<String>>,
    pub n: Option<Vec<usize>>,
    pub reps: Option<usize>,
    pub estimators: Option<Vec<String>>,
    pub out: Option<PathBuf>,
    pub timestamp: Option<bool>,
    pub fit: Option<FitOptions>,
}

impl ConfigFile {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("reading {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::config(format!("parsing {}: {e}", path.display())))
    }
}

/// Truncation choice before the sample size is known.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KChoice {
    Fixed(usize),
    Auto,
    CrossValidate {
        /// `None` means the default candidate set for the sample size.
        candidates: Option<Vec<usize>>,
        /// `None` means leave-one-out up to 500 rows, 10 folds beyond.
        folds: Option<usize>,
        mode: CvMode,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: CommandKind,
    pub input_path: Option<PathBuf>,
    pub column_map: Option<ColumnMap>,
    pub k_choice: KChoice,
    pub ci_level: f64,
    pub trim: f64,
    pub seed: u64,
    pub bootstrap_b: usize,
    pub grid: GridSpec,
    pub output_dir: PathBuf,
    pub standardize_covariates: bool,
    pub settings: Vec<SettingId>,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub estimators: Vec<StudyEstimator>,
    pub fit: FitOptions,
    pub timestamp: bool,
    pub threads: usize,
}

/// Parses `a..b` (inclusive), `a,b,c` or a single integer.
pub fn parse_candidates(spec: &str) -> Result<Vec<usize>, CliError> {
    let bad = || CliError::config(format!("cannot parse candidate set {spec:?}"));
    let spec = spec.trim();
    let mut out: Vec<usize> = if let Some((a, b)) = spec.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        spec.split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    };
    out.sort_unstable();
    out.dedup();
    if out.is_empty() || out.contains(&0) {
        return Err(bad());
    }
    Ok(out)
}

fn threads_from_env() -> Result<usize, CliError> {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let cap: usize = v
                .trim()
                .parse()
                .ok()
                .filter(|&c| c > 0)
                .ok_or_else(|| CliError::config(format!("{THREADS_ENV}={v:?} is not a positive integer")))?;
            Ok(cap)
        }
        Err(_) => Ok(available),
    }
}

impl RunConfig {
    /// Merges flags over the optional config file over defaults and checks
    /// the per-command requirements.
    pub fn resolve(command: CommandKind, flags: &Flags) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(p) => ConfigFile::read(p)?,
            None => ConfigFile::default(),
        };
        if let Some(c) = file.command {
            if c != command {
                return Err(CliError::config(format!(
                    "config file is for {:?} but {:?} was requested",
                    c.name(),
                    command.name()
                )));
            }
        }
        macro_rules! pick {
            ($field:ident) => {
                flags.$field.clone().or(file.$field.clone())
            };
        }

        let k_choice = {
            let flag_set = flags.k.is_some() || flags.k_cv.is_some() || flags.k_auto;
            let (k, k_cv, k_auto) = if flag_set {
                (flags.k, flags.k_cv.clone(), flags.k_auto)
            } else {
                (file.k, file.k_cv.clone(), file.k_auto.unwrap_or(false))
            };
            let chosen = [k.is_some(), k_cv.is_some(), k_auto].iter().filter(|&&b| b).count();
            if chosen > 1 {
                return Err(CliError::config("k, k_cv and k_auto are mutually exclusive"));
            }
            let mode: CvMode = pick!(mode).unwrap_or(ModeArg::Treatment).into();
            let folds = pick!(folds);
            match (k, k_cv) {
                (Some(0), _) => return Err(CliError::config("k must be at least 1")),
                (Some(k), _) if command == CommandKind::Cv => KChoice::CrossValidate {
                    candidates: Some(vec![k]),
                    folds,
                    mode,
                },
                (Some(k), _) => KChoice::Fixed(k),
                (None, Some(spec)) => KChoice::CrossValidate {
                    candidates: Some(parse_candidates(&spec)?),
                    folds,
                    mode,
                },
                (None, None) if command == CommandKind::Cv => KChoice::CrossValidate {
                    candidates: None,
                    folds,
                    mode,
                },
                (None, None) => KChoice::Auto,
            }
        };

        let column_map = match (pick!(outcome), pick!(treatment), pick!(covariates)) {
            (Some(outcome), Some(treatment), Some(covariates)) => Some(ColumnMap {
                outcome,
                treatment,
                covariates: covariates.into_iter().map(|c| c.trim().to_string()).collect(),
            }),
            (None, None, None) => None,
            _ => {
                return Err(CliError::config(
                    "outcome, treatment and covariates must be given together",
                ))
            }
        };

        let grid_points = pick!(grid_points).unwrap_or(101);
        let grid = match (pick!(grid_min), pick!(grid_max)) {
            (Some(min), Some(max)) => GridSpec::Explicit { min, max, points: grid_points },
            (None, None) => GridSpec::Auto { points: grid_points },
            _ => return Err(CliError::config("grid_min and grid_max must be given together")),
        };

        let settings = pick!(setting)
            .unwrap_or_default()
            .iter()
            .map(|s| s.parse::<SettingId>().map_err(|e| CliError::config(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let estimators = match pick!(estimators) {
            Some(list) => list
                .iter()
                .map(|s| s.parse::<StudyEstimator>().map_err(|e| CliError::config(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?,
            None => vec![StudyEstimator::WeightedAte, StudyEstimator::Ate],
        };

        let cfg = RunConfig {
            command,
            input_path: pick!(input),
            column_map,
            k_choice,
            ci_level: pick!(ci).unwrap_or(0.95),
            trim: pick!(trim).unwrap_or(0.0),
            seed: pick!(seed).unwrap_or(0),
            bootstrap_b: pick!(boot).unwrap_or(500),
            grid,
            output_dir: pick!(out).unwrap_or_else(|| PathBuf::from("out")),
            standardize_covariates: flags.standardize || file.standardize.unwrap_or(false),
            settings,
            sample_sizes: pick!(n).unwrap_or_default(),
            replications: pick!(reps).unwrap_or(0),
            estimators,
            fit: file.fit.unwrap_or_default(),
            timestamp: flags.timestamp || file.timestamp.unwrap_or(false),
            threads: threads_from_env()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(CliError::config(format!("ci level {} outside (0, 1)", self.ci_level)));
        }
        if !(0.0..0.1).contains(&self.trim) {
            return Err(CliError::config(format!("trim {} outside [0, 0.1)", self.trim)));
        }
        self.fit.validate().map_err(|e| CliError::config(e.to_string()))?;
        match self.command {
            CommandKind::Simulate => {
                if self.settings.is_empty() {
                    return Err(CliError::config("simulate requires --setting"));
                }
                if self.sample_sizes.is_empty() {
                    return Err(CliError::config("simulate requires --n"));
                }
                if self.replications == 0 {
                    return Err(CliError::config("simulate requires --reps"));
                }
            }
            _ => {
                if self.input_path.is_none() {
                    return Err(CliError::config(format!("{} requires --input", self.command.name())));
                }
                if self.column_map.is_none() {
                    return Err(CliError::config(format!(
                        "{} requires --outcome, --treatment and --covariates",
                        self.command.name()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidate_grammar() {
        assert_eq!(parse_candidates("2..6").unwrap(), vec![2, 3, 4, 5, 6]);
        assert_eq!(parse_candidates("2..=4").unwrap(), vec![2, 3, 4]);
        assert_eq!(parse_candidates("5,3,3").unwrap(), vec![3, 5]);
        assert_eq!(parse_candidates("2").unwrap(), vec![2]);
        assert!(parse_candidates("6..2").is_err());
        assert!(parse_candidates("0,1").is_err());
        assert!(parse_candidates("a").is_err());
    }

    #[test]
    fn flags_override_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        std::io::Write::write_all(
            &mut f,
            b"input = \"a.csv\"\noutcome = \"y\"\ntreatment = \"d\"\ncovariates = [\"x1\"]\nseed = 3\nk = 4\n",
        )
        .unwrap();
        let flags = Flags {
            config: Some(f.path().to_path_buf()),
            seed: Some(9),
            ..Flags::default()
        };
        let cfg = RunConfig::resolve(CommandKind::Estimate, &flags).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.k_choice, KChoice::Fixed(4));
        assert_eq!(cfg.input_path, Some(PathBuf::from("a.csv")));
        let flags = Flags { k_auto: true, ..flags };
        assert_eq!(RunConfig::resolve(CommandKind::Estimate, &flags).unwrap().k_choice, KChoice::Auto);
    }

    #[test]
    fn simulate_needs_settings() {
        let flags = Flags {
            n: Some(vec![400]),
            reps: Some(10),
            ..Flags::default()
        };
        assert!(RunConfig::resolve(CommandKind::Simulate, &flags).is_err());
        let flags = Flags {
            setting: Some(vec!["5a".into()]),
            ..flags
        };
        let cfg = RunConfig::resolve(CommandKind::Simulate, &flags).unwrap();
        assert_eq!(cfg.settings, vec![SettingId::S5A]);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        std::io::Write::write_all(&mut f, b"bogus = 1\n").unwrap();
        let flags = Flags {
            config: Some(f.path().to_path_buf()),
            ..Flags::default()
        };
        assert!(RunConfig::resolve(CommandKind::Estimate, &flags).is_err());
    }
}
