use std::collections::BTreeMap;

use siate_core::effects::weighted_ate;
use siate_core::sim::{generate_dataset, SettingId, SimulationSetting};
use siate_core::truncation::{fold_partition, held_out_errors, select_k, CvMode};
use siate_core::{fit_single_index, predict_propensity, Dataset, FitOptions};

fn data_5a(n: usize, seed: u64) -> Dataset {
    generate_dataset(&SimulationSetting::get(SettingId::S5A), n, seed).unwrap().data
}

/// Scores the candidates with its own loop over the same partition.
fn oracle_scores(data: &Dataset, candidates: &[usize], parts: &[Vec<usize>], mode: CvMode) -> BTreeMap<usize, f64> {
    let opts = FitOptions::default();
    let mut out = BTreeMap::new();
    for &k in candidates {
        let mut errs = vec![0.0; data.len()];
        let mut failed = false;
        for held in parts {
            let keep: Vec<usize> = (0..data.len()).filter(|i| !held.contains(i)).collect();
            let train = data.subset(&keep).unwrap();
            let model = fit_single_index(&train, k, &opts).unwrap();
            if !model.converged() {
                failed = true;
                break;
            }
            let pi = predict_propensity(&model, &data.covariates().select_rows(held), opts.prop_clip).unwrap();
            let beta = match mode {
                CvMode::TreatmentPrediction => 0.0,
                CvMode::OutcomePrediction => {
                    let pin = predict_propensity(&model, train.covariates(), opts.prop_clip).unwrap();
                    weighted_ate(&train, &pin, 0.95).unwrap().point
                }
            };
            for (pos, &j) in held.iter().enumerate() {
                let d = data.treatments()[j];
                errs[j] = match mode {
                    CvMode::TreatmentPrediction => pi[pos] - d,
                    CvMode::OutcomePrediction => beta * (d - pi[pos]) - data.outcomes()[j],
                };
            }
        }
        let score = if failed { f64::INFINITY } else { errs.iter().map(|e| e * e).sum() };
        out.insert(k, score);
    }
    out
}

#[test]
fn ten_fold_scores_match_independent_loop() {
    let data = data_5a(400, 77);
    let candidates = [2, 3, 4, 5, 6];
    let cv = select_k(&data, &candidates, CvMode::TreatmentPrediction, 10, 13, &FitOptions::default()).unwrap();
    let parts = fold_partition(400, 10, 13).unwrap();
    let oracle = oracle_scores(&data, &candidates, &parts, CvMode::TreatmentPrediction);
    for (k, s) in &oracle {
        assert_eq!(cv.candidate_scores[k].to_bits(), s.to_bits(), "k = {k}");
    }
    let best = oracle
        .iter()
        .fold((0usize, f64::INFINITY), |(bk, bs), (&k, &s)| if s < bs { (k, s) } else { (bk, bs) })
        .0;
    assert_eq!(cv.chosen_k, best);
}

#[test]
fn outcome_mode_matches_independent_loop() {
    let data = data_5a(120, 78);
    let candidates = [2, 4];
    let cv = select_k(&data, &candidates, CvMode::OutcomePrediction, 6, 1, &FitOptions::default()).unwrap();
    let oracle = oracle_scores(&data, &candidates, &fold_partition(120, 6, 1).unwrap(), CvMode::OutcomePrediction);
    for (k, s) in &oracle {
        assert_eq!(cv.candidate_scores[k].to_bits(), s.to_bits());
    }
}

#[test]
fn exact_leave_one_out_scores_decompose() {
    let data = data_5a(60, 79);
    let cv = select_k(&data, &[2, 3], CvMode::TreatmentPrediction, 60, 0, &FitOptions::default()).unwrap();
    assert_eq!(cv.folds, 60);
    for (k, errs) in &cv.unit_errors {
        let sum: f64 = errs.iter().map(|e| e * e).sum();
        assert_eq!(sum.to_bits(), cv.candidate_scores[k].to_bits());
        assert!(cv.candidate_scores[k].is_finite() && cv.candidate_scores[k] >= 0.0);
    }
    let single = held_out_errors(&data, &[17], 3, CvMode::TreatmentPrediction, &FitOptions::default()).unwrap();
    assert_eq!(single[0].1.to_bits(), cv.unit_errors[&3][17].to_bits());
}

#[test]
fn singleton_candidate_is_chosen() {
    let data = data_5a(80, 80);
    let cv = select_k(&data, &[2], CvMode::TreatmentPrediction, 8, 5, &FitOptions::default()).unwrap();
    assert_eq!(cv.chosen_k, 2);
}

#[test]
fn repeated_calls_are_identical() {
    let data = data_5a(200, 81);
    let a = select_k(&data, &[2, 3, 4], CvMode::TreatmentPrediction, 10, 9, &FitOptions::default()).unwrap();
    let b = select_k(&data, &[4, 3, 2], CvMode::TreatmentPrediction, 10, 9, &FitOptions::default()).unwrap();
    assert_eq!(a, b);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let c = pool.install(|| select_k(&data, &[2, 3, 4], CvMode::TreatmentPrediction, 10, 9, &FitOptions::default()).unwrap());
    assert_eq!(a, c);
}

#[test]
fn invalid_inputs() {
    let data = data_5a(50, 82);
    let opts = FitOptions::default();
    assert!(select_k(&data, &[], CvMode::TreatmentPrediction, 5, 0, &opts).is_err());
    assert!(select_k(&data, &[0, 2], CvMode::TreatmentPrediction, 5, 0, &opts).is_err());
    assert!(select_k(&data, &[2], CvMode::TreatmentPrediction, 1, 0, &opts).is_err());
    assert!(select_k(&data, &[2], CvMode::TreatmentPrediction, 51, 0, &opts).is_err());
}
