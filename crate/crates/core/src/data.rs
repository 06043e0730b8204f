//! Observed sample `(Y, D, X)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Outcome, binary treatment and covariate matrix for `N` units.
///
/// Construction validates the shape and content, so every `Dataset` in
/// circulation has matching lengths, finite entries, `N >= d + 2` and both
/// treatment arms present.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    outcomes: DVector<f64>,
    treatments: DVector<f64>,
    covariates: DMatrix<f64>,
}

impl Dataset {
    pub fn new(
        outcomes: DVector<f64>,
        treatments: DVector<f64>,
        covariates: DMatrix<f64>,
    ) -> Result<Self> {
        let n = outcomes.len();
        if treatments.len() != n || covariates.nrows() != n {
            return Err(Error::invalid(format!(
                "length mismatch: {} outcomes, {} treatments, {} covariate rows",
                n,
                treatments.len(),
                covariates.nrows()
            )));
        }
        let d = covariates.ncols();
        if d == 0 {
            return Err(Error::invalid("covariate matrix has no columns"));
        }
        if n < d + 2 {
            return Err(Error::InsufficientData {
                valid: n,
                required: d + 2,
            });
        }
        if outcomes.iter().chain(covariates.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite outcome or covariate"));
        }
        if let Some(i) = treatments.iter().position(|&t| t != 0.0 && t != 1.0) {
            return Err(Error::Validation {
                row: i + 1,
                message: format!("treatment value {} is not 0 or 1", treatments[i]),
            });
        }
        let treated = treatments.iter().filter(|&&t| t == 1.0).count();
        if treated == 0 || treated == n {
            return Err(Error::invalid(
                "treatment vector must contain both 0 and 1",
            ));
        }
        Ok(Self {
            outcomes,
            treatments,
            covariates,
        })
    }

    /// Builds a dataset from row-major covariates.
    pub fn from_rows(outcomes: &[f64], treatments: &[f64], rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("ragged covariate rows"));
        }
        let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(
            DVector::from_column_slice(outcomes),
            DVector::from_column_slice(treatments),
            x,
        )
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn outcomes(&self) -> &DVector<f64> {
        &self.outcomes
    }

    pub fn treatments(&self) -> &DVector<f64> {
        &self.treatments
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    /// Rows `idx` as a new dataset, validated like any other.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let y = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.outcomes[i]));
        let t = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.treatments[i]));
        let x = self.covariates.select_rows(idx);
        Self::new(y, t, x)
    }

    /// Same data with every covariate column centered and scaled to unit
    /// sample standard deviation. Constant columns are only centered.
    pub fn standardized(&self) -> Self {
        let n = self.len() as f64;
        let mut x = self.covariates.clone();
        for mut col in x.column_iter_mut() {
            let mean = col.sum() / n;
            col.add_scalar_mut(-mean);
            let sd = (col.norm_squared() / (n - 1.0)).sqrt();
            if sd > 0.0 {
                col /= sd;
            }
        }
        Self {
            outcomes: self.outcomes.clone(),
            treatments: self.treatments.clone(),
            covariates: x,
        }
    }

    /// Copy of the dataset with the outcome vector replaced.
    pub fn with_outcomes(&self, outcomes: DVector<f64>) -> Result<Self> {
        Self::new(outcomes, self.treatments.clone(), self.covariates.clone())
    }

    /// Copy with negated covariates.
    pub fn negated_covariates(&self) -> Self {
        Self {
            outcomes: self.outcomes.clone(),
            treatments: self.treatments.clone(),
            covariates: -&self.covariates,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_single_arm() {
        let err = Dataset::from_rows(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0], &vec![vec![0.0]; 3]);
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn rejects_non_binary_treatment_with_row() {
        let err = Dataset::from_rows(&[1.0, 2.0, 3.0], &[1.0, 2.0, 0.0], &vec![vec![0.0]; 3]);
        match err {
            Err(Error::Validation { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn requires_d_plus_two_rows() {
        let err = Dataset::from_rows(&[1.0, 2.0], &[1.0, 0.0], &vec![vec![0.0, 1.0]; 2]);
        assert!(matches!(err, Err(Error::InsufficientData { valid: 2, required: 4 })));
    }

    #[test]
    fn subset_keeps_rows() {
        let ds = Dataset::from_rows(
            &[1.0, 2.0, 3.0, 4.0],
            &[1.0, 0.0, 1.0, 0.0],
            &[vec![1.0], vec![2.0], vec![3.0], vec![4.0]],
        )
        .unwrap();
        let sub = ds.subset(&[0, 1, 3]).unwrap();
        assert_eq!(sub.outcomes().as_slice(), &[1.0, 2.0, 4.0]);
        assert_eq!(sub.covariates()[(2, 0)], 4.0);
    }
}
