//! Truncation-level selection by held-out prediction error.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::effects::weighted_ate;
use crate::error::{Error, Result};
use crate::index::{fit_single_index, predict_propensity, FitOptions};

/// `max(1, ⌊N^{1/5}⌋)`, computed in integers.
pub fn default_k(n: usize) -> usize {
    let mut k = 1usize;
    while (k + 1).checked_pow(5).is_some_and(|p| p <= n) {
        k += 1;
    }
    k
}

/// `{2, ..., max(default_k(N), 6)}`.
pub fn default_candidates(n: usize) -> Vec<usize> {
    (2..=default_k(n).max(6)).collect()
}

/// Exact leave-one-out up to 500 units, 10 folds beyond.
pub fn default_folds(n: usize) -> usize {
    if n > 500 {
        10
    } else {
        n
    }
}

/// What the held-out prediction is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvMode {
    /// `π̂_{k,-j}(X_j)` against `D_j`.
    #[default]
    TreatmentPrediction,
    /// `β̂_{-j} (D_j - π̂_{k,-j}(X_j))` against `Y_j`.
    OutcomePrediction,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    pub chosen_k: usize,
    /// Raw sum of squared held-out errors per candidate; `inf` when any
    /// held-in fit failed.
    pub candidate_scores: BTreeMap<usize, f64>,
    /// Held-out error of every unit (original order) per scored candidate.
    pub unit_errors: BTreeMap<usize, Vec<f64>>,
    /// Failed held-in fits per candidate.
    pub failures: BTreeMap<usize, usize>,
    pub mode: CvMode,
    pub folds: usize,
}

/// Held-out index sets. `folds == n` is exact leave-one-out and ignores the
/// seed; otherwise a seeded shuffle is dealt round-robin and each fold is
/// sorted.
pub fn fold_partition(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || folds > n {
        return Err(Error::invalid(format!("folds must lie in [2, {n}], got {folds}")));
    }
    if folds == n {
        return Ok((0..n).map(|i| vec![i]).collect());
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts = vec![Vec::with_capacity(n / folds + 1); folds];
    for (pos, &i) in order.iter().enumerate() {
        parts[pos % folds].push(i);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

/// Errors `(held-out unit, prediction - target)` for one held-in fit, or
/// `None` when the fit fails.
pub fn held_out_errors(
    data: &Dataset,
    held_out: &[usize],
    k: usize,
    mode: CvMode,
    opts: &FitOptions,
) -> Option<Vec<(usize, f64)>> {
    let mut mask = vec![true; data.len()];
    for &j in held_out {
        mask[j] = false;
    }
    let held_in: Vec<usize> = (0..data.len()).filter(|&i| mask[i]).collect();
    let train = data.subset(&held_in).ok()?;
    let model = fit_single_index(&train, k, opts).ok()?;
    if !model.converged() {
        return None;
    }
    let test_x = data.covariates().select_rows(held_out);
    let pi_out = predict_propensity(&model, &test_x, opts.prop_clip).ok()?;
    let beta = match mode {
        CvMode::TreatmentPrediction => 0.0,
        CvMode::OutcomePrediction => {
            let pi_in = predict_propensity(&model, train.covariates(), opts.prop_clip).ok()?;
            weighted_ate(&train, &pi_in, 0.95).ok()?.point
        }
    };
    Some(
        held_out
            .iter()
            .zip(pi_out.iter())
            .map(|(&j, &p)| {
                let d = data.treatments()[j];
                let err = match mode {
                    CvMode::TreatmentPrediction => p - d,
                    CvMode::OutcomePrediction => beta * (d - p) - data.outcomes()[j],
                };
                (j, err)
            })
            .collect(),
    )
}

/// Scores every candidate `k` on the held-out folds and returns the
/// minimizer, breaking ties toward the smaller `k`.
pub fn select_k(
    data: &Dataset,
    candidates: &[usize],
    mode: CvMode,
    folds: usize,
    seed: u64,
    opts: &FitOptions,
) -> Result<CvResult> {
    opts.validate()?;
    if candidates.is_empty() || candidates.contains(&0) {
        return Err(Error::invalid("candidate set must be nonempty and positive"));
    }
    let mut cands = candidates.to_vec();
    cands.sort_unstable();
    cands.dedup();
    let parts = fold_partition(data.len(), folds, seed)?;

    let jobs: Vec<(usize, usize)> = cands
        .iter()
        .flat_map(|&k| (0..parts.len()).map(move |f| (k, f)))
        .collect();
    let outcomes: Vec<Option<Vec<(usize, f64)>>> = jobs
        .par_iter()
        .map(|&(k, f)| held_out_errors(data, &parts[f], k, mode, opts))
        .collect();

    let mut candidate_scores = BTreeMap::new();
    let mut unit_errors = BTreeMap::new();
    let mut failures = BTreeMap::new();
    for (ci, &k) in cands.iter().enumerate() {
        let slice = &outcomes[ci * parts.len()..(ci + 1) * parts.len()];
        let failed = slice.iter().filter(|o| o.is_none()).count();
        failures.insert(k, failed);
        if failed > 0 {
            candidate_scores.insert(k, f64::INFINITY);
            continue;
        }
        let mut errs = vec![0.0; data.len()];
        for (j, e) in slice.iter().flatten().flatten() {
            errs[*j] = *e;
        }
        candidate_scores.insert(k, errs.iter().map(|e| e * e).sum());
        unit_errors.insert(k, errs);
    }
    let chosen_k = argmin_smallest(&candidate_scores).ok_or_else(|| {
        Error::SelectionFailure(format!(
            "every candidate had a failed held-in fit (failures: {failures:?})"
        ))
    })?;
    Ok(CvResult {
        chosen_k,
        candidate_scores,
        unit_errors,
        failures,
        mode,
        folds,
    })
}

/// Smallest key among the finite minimal scores.
pub(crate) fn argmin_smallest(scores: &BTreeMap<usize, f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (&k, &s) in scores {
        if !s.is_finite() {
            continue;
        }
        if best.is_none_or(|(_, b)| s < b) {
            best = Some((k, s));
        }
    }
    best.map(|(k, _)| k)
}
