use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{
    group_into_studies, validate_schema, CovariateKind, CovariateSpec, CovariateValue, DatasetError,
    PatientRecord, Result, StudyDataset, TreatmentRegistry,
};

pub const STUDY_COLUMN: &str = "study_id";
pub const TREATMENT_COLUMN: &str = "treatment";
pub const OUTCOME_COLUMN: &str = "outcome";

pub fn load_ipd(
    path: impl AsRef<Path>,
    schema: &[CovariateSpec],
    registry: &TreatmentRegistry,
) -> Result<Vec<StudyDataset>> {
    let file = File::open(path)?;
    read_ipd(file, schema, registry)
}

fn is_missing(field: &str) -> bool {
    field.is_empty() || field == "NA"
}

/// Reads comma-separated IPD with a header row. Columns not named by the schema are ignored.
pub fn read_ipd<R: Read>(
    reader: R,
    schema: &[CovariateSpec],
    registry: &TreatmentRegistry,
) -> Result<Vec<StudyDataset>> {
    validate_schema(schema)?;
    registry.validate()?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| DatasetError::Malformed { line: 1, message: e.to_string() })?
        .clone();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let study_col = column(STUDY_COLUMN)?;
    let treatment_col = column(TREATMENT_COLUMN)?;
    let outcome_col = column(OUTCOME_COLUMN)?;
    let cov_cols = schema.iter().map(|s| column(&s.name)).collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| DatasetError::Malformed {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| row.get(i).unwrap_or("");

        let study_id = field(study_col);
        if study_id.is_empty() {
            return Err(DatasetError::Malformed { line, message: "empty study id".into() });
        }
        let treatment = field(treatment_col);
        if !registry.contains(treatment) {
            return Err(DatasetError::UnknownTreatment { line, treatment: treatment.to_string() });
        }
        let outcome = match field(outcome_col) {
            "0" => false,
            "1" => true,
            other => return Err(DatasetError::InvalidOutcome { line, value: other.to_string() }),
        };

        let mut covariates = BTreeMap::new();
        for (spec, &col) in schema.iter().zip(&cov_cols) {
            let raw = field(col);
            let value = if is_missing(raw) {
                CovariateValue::Missing
            } else {
                match spec.kind {
                    CovariateKind::Continuous => match raw.parse::<f64>() {
                        Ok(x) if x.is_finite() => CovariateValue::Number(x),
                        _ => {
                            return Err(DatasetError::Malformed {
                                line,
                                message: format!("covariate '{}': '{raw}' is not a finite number", spec.name),
                            })
                        }
                    },
                    CovariateKind::Categorical => {
                        if !spec.accepts_label(raw) {
                            return Err(DatasetError::Malformed {
                                line,
                                message: format!("covariate '{}': unknown level '{raw}'", spec.name),
                            });
                        }
                        CovariateValue::Label(raw.to_string())
                    }
                }
            };
            covariates.insert(spec.name.clone(), value);
        }
        records.push(PatientRecord {
            study_id: study_id.to_string(),
            treatment: treatment.to_string(),
            outcome,
            covariates,
        });
    }
    Ok(group_into_studies(records, registry))
}

/// Writes studies in the format [`read_ipd`] accepts.
pub fn write_ipd<W: Write>(writer: W, studies: &[StudyDataset], covariates: &[String]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let to_io = |e: csv::Error| DatasetError::Io(std::io::Error::other(e));
    let mut header = vec![STUDY_COLUMN.to_string(), TREATMENT_COLUMN.to_string(), OUTCOME_COLUMN.to_string()];
    header.extend(covariates.iter().cloned());
    wtr.write_record(&header).map_err(to_io)?;
    for study in studies {
        for rec in &study.records {
            let mut row = vec![
                rec.study_id.clone(),
                rec.treatment.clone(),
                if rec.outcome { "1".into() } else { "0".into() },
            ];
            for name in covariates {
                row.push(match rec.covariates.get(name) {
                    Some(CovariateValue::Number(x)) => x.to_string(),
                    Some(CovariateValue::Label(l)) => l.clone(),
                    Some(CovariateValue::Missing) | None => "NA".into(),
                });
            }
            wtr.write_record(&row).map_err(to_io)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_ipd_csv(path: impl AsRef<Path>, studies: &[StudyDataset], covariates: &[String]) -> Result<()> {
    write_ipd(File::create(path)?, studies, covariates)
}
