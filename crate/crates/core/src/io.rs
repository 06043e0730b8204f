//! CSV ingestion and export of datasets.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Which header names hold the outcome, treatment and covariates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub outcome: String,
    pub treatment: String,
    pub covariates: Vec<String>,
}

/// A mapped cell that could not be parsed; `row` is 1-based over data rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectedRow {
    pub row: usize,
    pub column: String,
    pub value: String,
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub data: Dataset,
    /// Rows dropped for a missing or non-numeric mapped cell.
    pub rejected: Vec<RejectedRow>,
}

fn parse_cell(raw: &str) -> Option<f64> {
    let t = raw.trim();
    if t.is_empty() {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a headed CSV file into a dataset.
pub fn load_csv(path: impl AsRef<Path>, columns: &ColumnMap) -> Result<LoadedData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::Headers)
        .from_path(path.as_ref())?;
    let header = reader.headers()?.clone();
    let locate = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column {name:?} not found in header")))
    };
    if columns.covariates.is_empty() {
        return Err(Error::Schema("no covariate columns mapped".into()));
    }
    let y_at = locate(&columns.outcome)?;
    let d_at = locate(&columns.treatment)?;
    let x_at = columns
        .covariates
        .iter()
        .map(|c| locate(c))
        .collect::<Result<Vec<_>>>()?;

    let mut ys = Vec::new();
    let mut ds = Vec::new();
    let mut xs = Vec::new();
    let mut rejected = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let mut bad = None;
        let mut get = |at: usize, name: &str| {
            let raw = record.get(at).unwrap_or("");
            let v = parse_cell(raw);
            if v.is_none() && bad.is_none() {
                bad = Some(RejectedRow {
                    row,
                    column: name.to_string(),
                    value: raw.to_string(),
                });
            }
            v.unwrap_or(f64::NAN)
        };
        let y = get(y_at, &columns.outcome);
        let d = get(d_at, &columns.treatment);
        let x: Vec<f64> = x_at
            .iter()
            .zip(&columns.covariates)
            .map(|(&at, name)| get(at, name))
            .collect();
        if let Some(b) = bad {
            rejected.push(b);
            continue;
        }
        if d != 0.0 && d != 1.0 {
            return Err(Error::Validation {
                row,
                message: format!("treatment {:?} is {d}, expected 0 or 1", columns.treatment),
            });
        }
        ys.push(y);
        ds.push(d);
        xs.extend(x);
    }
    let n = ys.len();
    let dim = columns.covariates.len();
    if n < dim + 2 {
        return Err(Error::InsufficientData {
            valid: n,
            required: dim + 2,
        });
    }
    let data = Dataset::new(
        DVector::from_vec(ys),
        DVector::from_vec(ds),
        DMatrix::from_row_slice(n, dim, &xs),
    )?;
    Ok(LoadedData { data, rejected })
}

/// Writes `data` with the given header names. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_csv(path: impl AsRef<Path>, data: &Dataset, columns: &ColumnMap) -> Result<()> {
    if columns.covariates.len() != data.dim() {
        return Err(Error::invalid(format!(
            "{} covariate names for {} columns",
            columns.covariates.len(),
            data.dim()
        )));
    }
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec![columns.outcome.as_str(), columns.treatment.as_str()];
    header.extend(columns.covariates.iter().map(String::as_str));
    w.write_record(&header)?;
    let x = data.covariates();
    let mut rec = Vec::with_capacity(header.len());
    for i in 0..data.len() {
        rec.clear();
        rec.push(data.outcomes()[i].to_string());
        rec.push(data.treatments()[i].to_string());
        rec.extend((0..data.dim()).map(|j| x[(i, j)].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
