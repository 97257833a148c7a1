//! Glue between the stages: design matrices from study records, scoring, and the stage-two
//! input. Works on `f64`, the precision the data files are read in.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{design_columns, encode_covariates, CovariateSpec, EncodeError, PatientRecord, StudyDataset};
use crate::nmr::{NmrPatient, NmrStudy};
use crate::risk::{
    fit_lasso_cv, fit_mle, fit_penalized_mle, DesignMatrix, FitError, LassoCvOptions, RiskModel, RiskScore,
    DEFAULT_PENALTY_GRID,
};
use crate::scalar::shifted_mean;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("study {study}, record {record}: {source}")]
    Encode { study: String, record: usize, source: EncodeError },
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("no records selected")]
    Empty,
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// Stage-one fitting procedure, including any penalty selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Stage1Method {
    Mle,
    Lasso(LassoCvOptions),
    /// Fixed covariate set, ridge penalty chosen by modified AIC.
    PenalizedMle { grid: Vec<f64> },
}

impl Stage1Method {
    pub fn prespecified() -> Self {
        Stage1Method::PenalizedMle { grid: DEFAULT_PENALTY_GRID.to_vec() }
    }

    /// Fits on `design`; `seed` drives the cross-validation folds of the LASSO.
    pub fn fit(&self, design: &DesignMatrix<f64>, seed: u64) -> std::result::Result<RiskModel<f64>, FitError> {
        match self {
            Stage1Method::Mle => fit_mle(design),
            Stage1Method::Lasso(opts) => fit_lasso_cv(design, &LassoCvOptions { seed, ..*opts }),
            Stage1Method::PenalizedMle { grid } => fit_penalized_mle(design, grid),
        }
    }
}

/// Design matrix over the records accepted by `keep`, columns per [`design_columns`].
pub fn design_from_studies(
    studies: &[StudyDataset],
    schema: &[CovariateSpec],
    keep: impl Fn(&PatientRecord) -> bool,
) -> Result<DesignMatrix<f64>> {
    let names = design_columns(schema);
    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    for s in studies {
        for (i, r) in s.records.iter().enumerate().filter(|(_, r)| keep(r)) {
            let row = encode_covariates(&r.covariates, schema).map_err(|source| PipelineError::Encode {
                study: s.study_id.clone(),
                record: i,
                source,
            })?;
            rows.push(row);
            outcomes.push(r.outcome);
        }
    }
    if rows.is_empty() {
        return Err(PipelineError::Empty);
    }
    Ok(DesignMatrix::from_rows(names, &rows, &outcomes)?)
}

/// Expanded covariate map of one record, keyed like the model coefficients.
pub fn encoded_map(
    record: &PatientRecord,
    schema: &[CovariateSpec],
) -> std::result::Result<BTreeMap<String, f64>, EncodeError> {
    let row = encode_covariates(&record.covariates, schema)?;
    Ok(design_columns(schema).into_iter().zip(row).collect())
}

/// Scores every record and stores each study's mean logit risk as its center.
pub fn score_studies(
    studies: &mut [StudyDataset],
    schema: &[CovariateSpec],
    model: &RiskModel<f64>,
) -> Result<Vec<Vec<RiskScore<f64>>>> {
    let mut out = Vec::with_capacity(studies.len());
    for s in studies.iter_mut() {
        let mut scores = Vec::with_capacity(s.records.len());
        for (i, r) in s.records.iter().enumerate() {
            let map = encoded_map(r, schema).map_err(|source| PipelineError::Encode {
                study: s.study_id.clone(),
                record: i,
                source,
            })?;
            scores.push(model.score(&map)?);
        }
        let logits: Vec<f64> = scores.iter().map(|r| r.logit_risk).collect();
        s.center = (!logits.is_empty()).then(|| shifted_mean(&logits));
        out.push(scores);
    }
    Ok(out)
}

/// Stage-two input from scored studies.
pub fn nmr_studies(studies: &[StudyDataset], scores: &[Vec<RiskScore<f64>>]) -> Vec<NmrStudy<f64>> {
    studies
        .iter()
        .zip(scores)
        .map(|(s, sc)| NmrStudy {
            study_id: s.study_id.clone(),
            baseline: s.baseline_treatment.clone(),
            patients: s
                .records
                .iter()
                .zip(sc)
                .map(|(r, score)| NmrPatient {
                    treatment: r.treatment.clone(),
                    outcome: r.outcome,
                    logit_risk: score.logit_risk,
                })
                .collect(),
        })
        .collect()
}

/// Logit risks and outcomes of the records on `treatment`, e.g. the reference arms that
/// anchor predictions.
pub fn arm_scores(studies: &[StudyDataset], scores: &[Vec<RiskScore<f64>>], treatment: &str) -> (Vec<f64>, Vec<bool>) {
    studies
        .iter()
        .zip(scores)
        .flat_map(|(s, sc)| s.records.iter().zip(sc))
        .filter(|(r, _)| r.treatment == treatment)
        .map(|(r, score)| (score.logit_risk, r.outcome))
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::CovariateValue;

    fn record(study: &str, t: &str, y: bool, x: f64, g: &str) -> PatientRecord {
        let mut covariates = BTreeMap::new();
        covariates.insert("x".to_string(), CovariateValue::Number(x));
        covariates.insert("g".to_string(), CovariateValue::Label(g.into()));
        PatientRecord { study_id: study.into(), treatment: t.into(), outcome: y, covariates }
    }

    fn schema() -> Vec<CovariateSpec> {
        vec![CovariateSpec::continuous("x"), CovariateSpec::categorical("g", &["a", "b"], "a")]
    }

    fn studies() -> Vec<StudyDataset> {
        let recs: Vec<PatientRecord> = (0..40)
            .map(|i| {
                let t = if i % 2 == 0 { "P" } else { "A" };
                record(if i < 20 { "s1" } else { "s2" }, t, (i * 7) % 5 < 2, i as f64 * 0.1, if i % 3 == 0 { "b" } else { "a" })
            })
            .collect();
        let reg = crate::dataset::TreatmentRegistry::new(["P", "A"], "P").unwrap();
        crate::dataset::group_into_studies(recs, &reg)
    }

    #[test]
    fn design_selects_records_and_expands_levels() {
        let st = studies();
        let d = design_from_studies(&st, &schema(), |r| r.treatment == "P").unwrap();
        assert_eq!(d.n(), 20);
        assert_eq!(d.names(), ["x", "g=b"]);
        assert!(matches!(design_from_studies(&st, &schema(), |_| false), Err(PipelineError::Empty)));
    }

    #[test]
    fn scoring_sets_centers_to_mean_logit() {
        let mut st = studies();
        let d = design_from_studies(&st, &schema(), |_| true).unwrap();
        let model = fit_mle(&d).unwrap();
        let scores = score_studies(&mut st, &schema(), &model).unwrap();
        for (s, sc) in st.iter().zip(&scores) {
            let mean = sc.iter().map(|r| r.logit_risk).sum::<f64>() / sc.len() as f64;
            assert!((s.center.unwrap() - mean).abs() < 1e-12);
        }
        // Scores agree with the design-matrix linear predictor.
        let lp = model.linear_predictor(&d);
        let flat: Vec<f64> = scores.iter().flatten().map(|r| r.logit_risk).collect();
        for (a, b) in lp.iter().zip(&flat) {
            assert!((a - b).abs() < 1e-12);
        }
        let (lr, y) = arm_scores(&st, &scores, "P");
        assert_eq!(lr.len(), 20);
        assert_eq!(y.len(), 20);
        let nmr = nmr_studies(&st, &scores);
        assert_eq!(nmr.len(), 2);
        assert_eq!(nmr[0].baseline, "P");
        assert_eq!(nmr[0].patients.len(), 20);
    }
}
