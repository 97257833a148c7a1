//! Single-file bundle of both stages and the anchor, as loaded by the service.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    design_columns, encode_covariates, CovariateRange, CovariateSpec, CovariateValue, EncodeError, TreatmentRegistry,
};
use crate::nmr::NmrPosterior;
use crate::prediction::{PredictOptions, PredictionAnchor, PredictionError, Predictor};
use crate::risk::{RiskModel, RiskScore};

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed artifact: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported artifact version {0}")]
    Version(u32),
    #[error("{part} was fitted against stage-one model {found:?}, expected {expected}")]
    Fingerprint { part: &'static str, found: Option<String>, expected: String },
    #[error("risk model coefficients do not match the schema's design columns")]
    Schema,
    #[error(transparent)]
    Prediction(#[from] PredictionError),
}

pub type Result<T, E = ArtifactError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub version: u32,
    pub schema: Vec<CovariateSpec>,
    pub registry: TreatmentRegistry,
    /// Observed range of each continuous covariate in the training data.
    pub ranges: BTreeMap<String, CovariateRange>,
    pub stage1: RiskModel<f64>,
    pub stage2: NmrPosterior<f64>,
    pub anchor: PredictionAnchor<f64>,
    pub predict: PredictOptions,
    /// Fingerprint of `stage1`, shared by `stage2` and `anchor`.
    pub fingerprint: String,
}

impl ModelArtifact {
    /// Bundles the parts, stamping the stage-one fingerprint on both dependents.
    pub fn bundle(
        schema: Vec<CovariateSpec>,
        registry: TreatmentRegistry,
        ranges: BTreeMap<String, CovariateRange>,
        stage1: RiskModel<f64>,
        mut stage2: NmrPosterior<f64>,
        mut anchor: PredictionAnchor<f64>,
        predict: PredictOptions,
    ) -> Result<Self> {
        let fingerprint = stage1.fingerprint();
        for (part, found) in [("stage two", &stage2.stage1_fingerprint), ("anchor", &anchor.stage1_fingerprint)] {
            if found.as_ref().is_some_and(|f| *f != fingerprint) {
                return Err(ArtifactError::Fingerprint { part, found: found.clone(), expected: fingerprint });
            }
        }
        stage2.stage1_fingerprint = Some(fingerprint.clone());
        anchor.stage1_fingerprint = Some(fingerprint.clone());
        let artifact =
            Self { version: ARTIFACT_VERSION, schema, registry, ranges, stage1, stage2, anchor, predict, fingerprint };
        artifact.verify()?;
        Ok(artifact)
    }

    pub fn verify(&self) -> Result<()> {
        if self.version != ARTIFACT_VERSION {
            return Err(ArtifactError::Version(self.version));
        }
        let expected = self.stage1.fingerprint();
        let parts = [
            ("artifact", Some(&self.fingerprint)),
            ("stage two", self.stage2.stage1_fingerprint.as_ref()),
            ("anchor", self.anchor.stage1_fingerprint.as_ref()),
        ];
        for (part, found) in parts {
            if found != Some(&expected) {
                return Err(ArtifactError::Fingerprint { part, found: found.cloned(), expected });
            }
        }
        let columns = design_columns(&self.schema);
        if !self.stage1.coefficients.keys().eq(columns.iter()) {
            return Err(ArtifactError::Schema);
        }
        self.predict.validate()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("artifact serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let artifact: Self = serde_json::from_str(json)?;
        artifact.verify()?;
        Ok(artifact)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn predictor(&self) -> Result<Predictor<f64>> {
        Ok(Predictor::new(&self.stage2, &self.anchor, self.predict)?)
    }

    /// Baseline risk from raw (unencoded) covariates.
    pub fn score(&self, covariates: &BTreeMap<String, CovariateValue>) -> std::result::Result<RiskScore<f64>, EncodeError> {
        let row = encode_covariates(covariates, &self.schema)?;
        Ok(self.stage1.score_row(&row))
    }
}
