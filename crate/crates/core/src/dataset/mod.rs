//! Individual patient data: schema, ingestion, cleaning and numeric encoding.

mod encode;
mod io;
mod preprocess;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use encode::{design_columns, encode_covariates, observed_ranges, CovariateRange, EncodeError};
pub use io::{load_ipd, read_ipd, write_ipd, write_ipd_csv, OUTCOME_COLUMN, STUDY_COLUMN, TREATMENT_COLUMN};
pub use preprocess::{
    preprocess, DropReason, DroppedCovariate, MissingnessScope, PreprocessOptions, PreprocessReport,
};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: unknown treatment '{treatment}'")]
    UnknownTreatment { line: u64, treatment: String },
    #[error("line {line}: outcome must be 0 or 1, found '{value}'")]
    InvalidOutcome { line: u64, value: String },
    #[error("missing column '{0}' in header")]
    MissingColumn(String),
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("invalid treatment registry: {0}")]
    Registry(String),
    #[error("invalid option: {0}")]
    Options(String),
    #[error("covariate '{covariate}': value {value} is outside the domain of its transform")]
    TransformDomain { covariate: String, value: f64 },
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    #[default]
    None,
    Log1p,
    SquareRoot,
}

impl Transform {
    pub fn apply(self, x: f64) -> Option<f64> {
        match self {
            Transform::None => Some(x),
            Transform::Log1p if x > -1.0 => Some(x.ln_1p()),
            Transform::SquareRoot if x >= 0.0 => Some(x.sqrt()),
            _ => None,
        }
    }
}

/// Declaration of one candidate prognostic factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub kind: CovariateKind,
    #[serde(default)]
    pub transform: Transform,
    /// Declared levels (categorical only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_level: Option<String>,
    /// Rare labels folded into a declared level before anything else looks at the data.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub merge_map: BTreeMap<String, String>,
    /// Covariates this one is kept over when a correlated pair has to lose a member.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prefer_over: Vec<String>,
}

impl CovariateSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: CovariateKind::Continuous,
            transform: Transform::None,
            categories: Vec::new(),
            reference_level: None,
            merge_map: BTreeMap::new(),
            prefer_over: Vec::new(),
        }
    }

    pub fn categorical(name: impl Into<String>, categories: &[&str], reference: &str) -> Self {
        Self {
            name: name.into(),
            kind: CovariateKind::Categorical,
            transform: Transform::None,
            categories: categories.iter().map(|s| s.to_string()).collect(),
            reference_level: Some(reference.to_string()),
            merge_map: BTreeMap::new(),
            prefer_over: Vec::new(),
        }
    }

    pub fn with_transform(mut self, transform: Transform) -> Self {
        self.transform = transform;
        self
    }

    pub fn with_merge(mut self, from: &str, to: &str) -> Self {
        self.merge_map.insert(from.to_string(), to.to_string());
        self
    }

    /// Maps a raw label through `merge_map`; `None` when the result is not a declared level.
    pub fn resolve_label<'a>(&'a self, label: &'a str) -> Option<&'a str> {
        let merged = self.merge_map.get(label).map(String::as_str).unwrap_or(label);
        self.categories.iter().any(|c| c == merged).then_some(merged)
    }

    pub fn accepts_label(&self, label: &str) -> bool {
        self.resolve_label(label).is_some()
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DatasetError::Schema(format!("covariate '{}': {msg}", self.name)));
        if self.name.is_empty() {
            return bad("empty name".into());
        }
        if [STUDY_COLUMN, TREATMENT_COLUMN, OUTCOME_COLUMN].contains(&self.name.as_str()) {
            return bad("name collides with a reserved column".into());
        }
        match self.kind {
            CovariateKind::Continuous => {
                if !self.categories.is_empty() || self.reference_level.is_some() || !self.merge_map.is_empty() {
                    return bad("continuous covariates take no levels, reference or merge map".into());
                }
            }
            CovariateKind::Categorical => {
                if self.transform != Transform::None {
                    return bad("transforms apply to continuous covariates only".into());
                }
                if self.categories.is_empty() {
                    return bad("no categories declared".into());
                }
                let mut seen = std::collections::BTreeSet::new();
                if !self.categories.iter().all(|c| seen.insert(c)) {
                    return bad("duplicate category".into());
                }
                match &self.reference_level {
                    Some(r) if self.categories.contains(r) => {}
                    Some(r) => return bad(format!("reference level '{r}' is not a declared category")),
                    None => return bad("missing reference level".into()),
                }
                if let Some((k, v)) = self.merge_map.iter().find(|(_, v)| !self.categories.contains(v)) {
                    return bad(format!("merge target '{v}' (from '{k}') is not a declared category"));
                }
            }
        }
        Ok(())
    }
}

pub fn validate_schema(schema: &[CovariateSpec]) -> Result<()> {
    let mut names = std::collections::BTreeSet::new();
    for spec in schema {
        spec.validate()?;
        if !names.insert(spec.name.as_str()) {
            return Err(DatasetError::Schema(format!("duplicate covariate '{}'", spec.name)));
        }
    }
    Ok(())
}

/// Parses a schema document: a JSON array of covariate specs.
/// Hash of a schema's canonical JSON, stamped on models fitted against it.
pub fn schema_fingerprint(schema: &[CovariateSpec]) -> String {
    let json = serde_json::to_string(schema).expect("schema serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

pub fn parse_schema(json: &str) -> Result<Vec<CovariateSpec>> {
    let schema: Vec<CovariateSpec> =
        serde_json::from_str(json).map_err(|e| DatasetError::Schema(e.to_string()))?;
    validate_schema(&schema)?;
    Ok(schema)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentRegistry {
    pub treatments: Vec<String>,
    pub reference: String,
}

impl TreatmentRegistry {
    pub fn new<S: Into<String>>(treatments: impl IntoIterator<Item = S>, reference: &str) -> Result<Self> {
        let registry = Self {
            treatments: treatments.into_iter().map(Into::into).collect(),
            reference: reference.to_string(),
        };
        registry.validate()?;
        Ok(registry)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = self.treatments.iter().find(|t| !seen.insert(t.as_str())) {
            return Err(DatasetError::Registry(format!("duplicate treatment '{dup}'")));
        }
        if !self.contains(&self.reference) {
            return Err(DatasetError::Registry(format!(
                "reference '{}' is not a registered treatment",
                self.reference
            )));
        }
        Ok(())
    }

    pub fn contains(&self, treatment: &str) -> bool {
        self.treatments.iter().any(|t| t == treatment)
    }

    pub fn index_of(&self, treatment: &str) -> Option<usize> {
        self.treatments.iter().position(|t| t == treatment)
    }

    /// Treatments other than the reference, in registry order.
    pub fn non_reference(&self) -> impl Iterator<Item = &str> {
        self.treatments.iter().map(String::as_str).filter(move |t| *t != self.reference)
    }

    /// Same treatments with a different reference.
    pub fn with_reference(&self, reference: &str) -> Result<Self> {
        Self::new(self.treatments.clone(), reference)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovariateValue {
    Number(f64),
    Label(String),
    Missing,
}

impl CovariateValue {
    pub fn is_missing(&self) -> bool {
        matches!(self, CovariateValue::Missing)
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            CovariateValue::Number(x) => Some(*x),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub study_id: String,
    pub treatment: String,
    pub outcome: bool,
    pub covariates: BTreeMap<String, CovariateValue>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyDataset {
    pub study_id: String,
    pub records: Vec<PatientRecord>,
    pub baseline_treatment: String,
    /// Mean logit risk over the study's records, set once the records are scored.
    pub center: Option<f64>,
}

impl StudyDataset {
    /// Distinct treatments observed in the study, in registry order.
    pub fn arms(&self, registry: &TreatmentRegistry) -> Vec<String> {
        registry
            .treatments
            .iter()
            .filter(|t| self.records.iter().any(|r| &r.treatment == *t))
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Baseline arm of a study: its first arm in registry order.
pub(crate) fn baseline_for(records: &[PatientRecord], registry: &TreatmentRegistry) -> Option<String> {
    registry
        .treatments
        .iter()
        .find(|t| records.iter().any(|r| &r.treatment == *t))
        .cloned()
}

/// Groups records into studies by first appearance of their study id.
pub fn group_into_studies(records: Vec<PatientRecord>, registry: &TreatmentRegistry) -> Vec<StudyDataset> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<PatientRecord>> = BTreeMap::new();
    for rec in records {
        if !groups.contains_key(&rec.study_id) {
            order.push(rec.study_id.clone());
        }
        groups.entry(rec.study_id.clone()).or_default().push(rec);
    }
    order
        .into_iter()
        .map(|id| {
            let records = groups.remove(&id).unwrap_or_default();
            let baseline_treatment = baseline_for(&records, registry).unwrap_or_default();
            StudyDataset { study_id: id, records, baseline_treatment, center: None }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_validation_rules() {
        let ok = CovariateSpec::categorical("region", &["EE", "WE"], "EE").with_merge("India", "EE");
        assert!(validate_schema(&[ok.clone()]).is_ok());

        let bad_ref = CovariateSpec::categorical("region", &["EE", "WE"], "NA");
        assert!(validate_schema(&[bad_ref]).is_err());

        let bad_merge = ok.clone().with_merge("Chile", "RoW");
        assert!(validate_schema(&[bad_merge]).is_err());

        let mut bad_transform = ok;
        bad_transform.transform = Transform::Log1p;
        assert!(validate_schema(&[bad_transform]).is_err());

        let dup = vec![CovariateSpec::continuous("age"), CovariateSpec::continuous("age")];
        assert!(validate_schema(&dup).is_err());
    }

    #[test]
    fn registry_rules() {
        assert!(TreatmentRegistry::new(["P", "A"], "P").is_ok());
        assert!(TreatmentRegistry::new(["P", "A"], "X").is_err());
        assert!(TreatmentRegistry::new(["P", "P"], "P").is_err());
    }

    #[test]
    fn schema_json_shape() {
        let json = r#"[
            {"name": "age", "kind": "continuous"},
            {"name": "gd", "kind": "continuous", "transform": "log1p"},
            {"name": "edss", "kind": "continuous", "transform": "square-root"},
            {"name": "region", "kind": "categorical", "categories": ["EE", "WE", "RoW"],
             "reference_level": "EE", "merge_map": {"India": "RoW"}}
        ]"#;
        let schema = parse_schema(json).unwrap();
        assert_eq!(schema[1].transform, Transform::Log1p);
        assert_eq!(schema[2].transform, Transform::SquareRoot);
        assert_eq!(schema[3].resolve_label("India"), Some("RoW"));
        assert_eq!(schema[3].resolve_label("Mars"), None);
        let fp = schema_fingerprint(&schema);
        assert_eq!(fp, schema_fingerprint(&parse_schema(json).unwrap()));
        assert_ne!(fp, schema_fingerprint(&schema[1..]));
    }
}
