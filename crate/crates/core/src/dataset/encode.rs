use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CovariateKind, CovariateSpec, CovariateValue, StudyDataset};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncodeError {
    #[error("missing covariate '{field}'")]
    Missing { field: String },
    #[error("covariate '{field}' must be {expected}")]
    WrongType { field: String, expected: &'static str },
    #[error("covariate '{field}': unknown level '{level}'")]
    UnknownLevel { field: String, level: String },
    #[error("covariate '{field}': value {value} is outside the domain of its transform")]
    Domain { field: String, value: f64 },
}

impl EncodeError {
    pub fn field(&self) -> &str {
        match self {
            EncodeError::Missing { field }
            | EncodeError::WrongType { field, .. }
            | EncodeError::UnknownLevel { field, .. }
            | EncodeError::Domain { field, .. } => field,
        }
    }
}

fn indicator_name(covariate: &str, level: &str) -> String {
    format!("{covariate}={level}")
}

/// Numeric design columns: continuous covariates as-is, categoricals as indicators for
/// every non-reference level.
pub fn design_columns(schema: &[CovariateSpec]) -> Vec<String> {
    let mut cols = Vec::new();
    for spec in schema {
        match spec.kind {
            CovariateKind::Continuous => cols.push(spec.name.clone()),
            CovariateKind::Categorical => {
                let reference = spec.reference_level.as_deref().unwrap_or_default();
                cols.extend(
                    spec.categories.iter().filter(|c| c.as_str() != reference).map(|c| indicator_name(&spec.name, c)),
                );
            }
        }
    }
    cols
}

/// Encodes one patient's raw covariates into the row matching [`design_columns`],
/// applying the schema's transforms and merges.
pub fn encode_covariates(
    values: &BTreeMap<String, CovariateValue>,
    schema: &[CovariateSpec],
) -> Result<Vec<f64>, EncodeError> {
    let mut row = Vec::new();
    for spec in schema {
        let field = || spec.name.clone();
        let value = values.get(&spec.name).unwrap_or(&CovariateValue::Missing);
        match (spec.kind, value) {
            (_, CovariateValue::Missing) => return Err(EncodeError::Missing { field: field() }),
            (CovariateKind::Continuous, CovariateValue::Number(x)) => {
                let y = spec.transform.apply(*x).ok_or(EncodeError::Domain { field: field(), value: *x })?;
                row.push(y);
            }
            (CovariateKind::Continuous, CovariateValue::Label(_)) => {
                return Err(EncodeError::WrongType { field: field(), expected: "a number" })
            }
            (CovariateKind::Categorical, CovariateValue::Label(l)) => {
                let level = spec
                    .resolve_label(l)
                    .ok_or_else(|| EncodeError::UnknownLevel { field: field(), level: l.clone() })?;
                let reference = spec.reference_level.as_deref().unwrap_or_default();
                for c in spec.categories.iter().filter(|c| c.as_str() != reference) {
                    row.push(if c == level { 1.0 } else { 0.0 });
                }
            }
            (CovariateKind::Categorical, CovariateValue::Number(_)) => {
                return Err(EncodeError::WrongType { field: field(), expected: "a category label" })
            }
        }
    }
    Ok(row)
}

/// Observed raw range of a continuous covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateRange {
    pub min: f64,
    pub max: f64,
}

pub fn observed_ranges(studies: &[StudyDataset], schema: &[CovariateSpec]) -> BTreeMap<String, CovariateRange> {
    let mut out = BTreeMap::new();
    for spec in schema.iter().filter(|s| s.kind == CovariateKind::Continuous) {
        let values = studies
            .iter()
            .flat_map(|s| s.records.iter())
            .filter_map(|r| r.covariates.get(&spec.name).and_then(CovariateValue::as_number));
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        if min <= max {
            out.insert(spec.name.clone(), CovariateRange { min, max });
        }
    }
    out
}
