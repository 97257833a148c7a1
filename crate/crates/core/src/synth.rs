//! Synthetic IPD networks with known truth, and the placebo-only training demonstration.
//!
//! Outcomes follow the stage-two law with common effects, applied to the true logit risk
//! `β0 + Σ β_k x_k` centered exactly within each study.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{CovariateSpec, CovariateValue, PatientRecord, StudyDataset, TreatmentRegistry};
use crate::nmr::{build_likelihood, sample, NmrError, NmrSpec};
use crate::pipeline::{design_from_studies, nmr_studies, score_studies, PipelineError, Stage1Method};
use crate::risk::{FitError, FitMethod, RiskModel};
use crate::scalar::{expit, shifted_mean};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid generator spec: {0}")]
    Spec(String),
    #[error("the demonstration needs zero true treatment effects; {0} is non-zero")]
    NonNullTruth(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Nmr(#[from] NmrError),
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "distribution", rename_all = "snake_case")]
pub enum Distribution {
    Normal { mean: f64, sd: f64 },
    Bernoulli { p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCovariate {
    pub name: String,
    #[serde(flatten)]
    pub distribution: Distribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthArm {
    pub treatment: String,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthStudy {
    pub study_id: String,
    pub baseline_treatment: String,
    /// Baseline-arm log-odds at the study's mean risk.
    pub intercept: f64,
    pub arms: Vec<SynthArm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub treatments: Vec<String>,
    pub reference: String,
    pub covariates: Vec<SynthCovariate>,
    pub risk_intercept: f64,
    pub risk_coefficients: IndexMap<String, f64>,
    /// Missing entries are zero.
    #[serde(default)]
    pub true_delta: IndexMap<String, f64>,
    #[serde(default)]
    pub true_gamma: IndexMap<String, f64>,
    pub true_gamma0: f64,
    pub studies: Vec<SynthStudy>,
    pub seed: u64,
}

fn default_network_studies(n_total: usize) -> Vec<SynthStudy> {
    let layout: [(&str, f64, f64, &[&str]); 3] = [
        ("s1", -0.6, 0.275, &["placebo", "DF"]),
        ("s2", -0.3, 0.375, &["placebo", "DF", "GA"]),
        ("s3", -0.45, 0.35, &["placebo", "N"]),
    ];
    layout
        .iter()
        .map(|&(id, intercept, share, arms)| {
            let size = ((n_total as f64 * share / arms.len() as f64).round() as usize).max(1);
            SynthStudy {
                study_id: id.into(),
                baseline_treatment: "placebo".into(),
                intercept,
                arms: arms.iter().map(|t| SynthArm { treatment: (*t).into(), size }).collect(),
            }
        })
        .collect()
}

fn treatments() -> Vec<String> {
    ["placebo", "DF", "GA", "N"].iter().map(|s| s.to_string()).collect()
}

impl GeneratorSpec {
    /// Three trials, {placebo, DF}, {placebo, DF, GA} and {placebo, N}, with effects of
    /// realistic size and four risk covariates.
    pub fn default_network(n_total: usize, seed: u64) -> Self {
        let normal = Distribution::Normal { mean: 0.0, sd: 1.0 };
        let covariates = vec![
            SynthCovariate { name: "x1".into(), distribution: normal },
            SynthCovariate { name: "x2".into(), distribution: normal },
            SynthCovariate { name: "x3".into(), distribution: Distribution::Bernoulli { p: 0.4 } },
            SynthCovariate { name: "x4".into(), distribution: normal },
        ];
        let risk_coefficients = [("x1", 0.5), ("x2", -0.4), ("x3", 0.6), ("x4", 0.3)]
            .iter()
            .map(|&(k, v)| (k.to_string(), v))
            .collect();
        let pairs = |v: [f64; 3]| -> IndexMap<String, f64> {
            ["DF", "GA", "N"].iter().zip(v).map(|(k, x)| (k.to_string(), x)).collect()
        };
        Self {
            treatments: treatments(),
            reference: "placebo".into(),
            covariates,
            risk_intercept: -0.5,
            risk_coefficients,
            true_delta: pairs([-0.89, -0.71, -1.22]),
            true_gamma: pairs([0.25, 0.23, -0.26]),
            true_gamma0: 1.26,
            studies: default_network_studies(n_total),
            seed,
        }
    }

    /// Null-effect network for the training-set demonstration: 30 standard-normal
    /// covariates of which 5 are prognostic, and an outcome slope of 1 on the true risk.
    pub fn bias_scenario(n_total: usize, seed: u64) -> Self {
        let covariates: Vec<SynthCovariate> = (1..=30)
            .map(|k| SynthCovariate { name: format!("z{k}"), distribution: Distribution::Normal { mean: 0.0, sd: 1.0 } })
            .collect();
        let risk_coefficients = covariates
            .iter()
            .enumerate()
            .map(|(k, c)| (c.name.clone(), if k < 5 { 0.4 } else { 0.0 }))
            .collect();
        Self {
            treatments: treatments(),
            reference: "placebo".into(),
            covariates,
            risk_intercept: -0.4,
            risk_coefficients,
            true_delta: IndexMap::new(),
            true_gamma: IndexMap::new(),
            true_gamma0: 1.0,
            studies: default_network_studies(n_total),
            seed,
        }
    }

    pub fn registry(&self) -> Result<TreatmentRegistry> {
        TreatmentRegistry::new(self.treatments.iter().cloned(), &self.reference)
            .map_err(|e| SynthError::Spec(e.to_string()))
    }

    /// Every generated covariate as a continuous schema entry.
    pub fn schema(&self) -> Vec<CovariateSpec> {
        self.covariates.iter().map(|c| CovariateSpec::continuous(&c.name)).collect()
    }

    pub fn delta(&self, treatment: &str) -> f64 {
        self.true_delta.get(treatment).copied().unwrap_or(0.0)
    }

    pub fn gamma(&self, treatment: &str) -> f64 {
        self.true_gamma.get(treatment).copied().unwrap_or(0.0)
    }

    pub fn n_total(&self) -> usize {
        self.studies.iter().flat_map(|s| &s.arms).map(|a| a.size).sum()
    }

    /// Model scoring exactly the true logit risk.
    pub fn oracle_model(&self) -> RiskModel<f64> {
        let coefficients = self
            .covariates
            .iter()
            .map(|c| (c.name.clone(), self.risk_coefficients.get(&c.name).copied().unwrap_or(0.0)))
            .collect();
        RiskModel::from_coefficients(FitMethod::Mle, self.risk_intercept, coefficients)
    }

    pub fn validate(&self) -> Result<()> {
        let registry = self.registry()?;
        let bad = |m: String| Err(SynthError::Spec(m));
        for (map, label) in [(&self.true_delta, "true_delta"), (&self.true_gamma, "true_gamma")] {
            for (t, &v) in map {
                if !registry.contains(t) {
                    return bad(format!("{label}: unknown treatment {t}"));
                }
                if *t == self.reference && v != 0.0 {
                    return bad(format!("{label}: reference treatment must be 0"));
                }
                if !v.is_finite() {
                    return bad(format!("{label}[{t}] is not finite"));
                }
            }
        }
        for name in self.risk_coefficients.keys() {
            if !self.covariates.iter().any(|c| &c.name == name) {
                return bad(format!("coefficient for undeclared covariate {name}"));
            }
        }
        for c in &self.covariates {
            match c.distribution {
                Distribution::Normal { mean, sd } if !(sd > 0.0) || !mean.is_finite() || !sd.is_finite() => {
                    return bad(format!("covariate {}: normal needs a finite mean and sd > 0", c.name))
                }
                Distribution::Bernoulli { p } if !(0.0..=1.0).contains(&p) => {
                    return bad(format!("covariate {}: bernoulli p must lie in [0, 1]", c.name))
                }
                _ => {}
            }
        }
        if self.studies.is_empty() {
            return bad("no studies".into());
        }
        for s in &self.studies {
            if s.arms.iter().any(|a| a.size == 0) {
                return bad(format!("study {}: arm sizes must be at least 1", s.study_id));
            }
            if let Some(a) = s.arms.iter().find(|a| !registry.contains(&a.treatment)) {
                return bad(format!("study {}: unknown treatment {}", s.study_id, a.treatment));
            }
            if !s.arms.iter().any(|a| a.treatment == s.baseline_treatment) {
                return bad(format!("study {}: baseline {} has no arm", s.study_id, s.baseline_treatment));
            }
        }
        Ok(())
    }
}

/// Generated studies with the true logit risk of every record, aligned with `records`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub studies: Vec<StudyDataset>,
    pub true_logit_risk: Vec<Vec<f64>>,
}

fn draw(rng: &mut ChaCha8Rng, d: Distribution) -> f64 {
    match d {
        Distribution::Normal { mean, sd } => {
            let z: f64 = rng.sample(StandardNormal);
            mean + sd * z
        }
        Distribution::Bernoulli { p } => {
            if rng.random::<f64>() < p {
                1.0
            } else {
                0.0
            }
        }
    }
}

pub fn generate(spec: &GeneratorSpec) -> Result<Generated> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let oracle = spec.oracle_model();
    let mut studies = Vec::with_capacity(spec.studies.len());
    let mut truth = Vec::with_capacity(spec.studies.len());
    for s in &spec.studies {
        let mut records = Vec::new();
        let mut logits = Vec::new();
        for arm in &s.arms {
            for _ in 0..arm.size {
                let mut covariates = BTreeMap::new();
                let mut eta = spec.risk_intercept;
                for c in &spec.covariates {
                    let x = draw(&mut rng, c.distribution);
                    eta += oracle.coefficients[&c.name] * x;
                    covariates.insert(c.name.clone(), CovariateValue::Number(x));
                }
                logits.push(eta);
                records.push(PatientRecord {
                    study_id: s.study_id.clone(),
                    treatment: arm.treatment.clone(),
                    outcome: false,
                    covariates,
                });
            }
        }
        let center = shifted_mean(&logits);
        let h = &s.baseline_treatment;
        for (r, &lr) in records.iter_mut().zip(&logits) {
            let t = &r.treatment;
            let slope = spec.true_gamma0 + spec.gamma(t) - spec.gamma(h);
            let eta = s.intercept + spec.delta(t) - spec.delta(h) + slope * (lr - center);
            r.outcome = rng.random::<f64>() < expit(eta);
        }
        studies.push(StudyDataset {
            study_id: s.study_id.clone(),
            records,
            baseline_treatment: s.baseline_treatment.clone(),
            center: None,
        });
        truth.push(logits);
    }
    Ok(Generated { studies, true_logit_risk: truth })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    /// Stage one trained on the reference arms only.
    PlaceboOnly,
    /// Stage one trained on every arm, ignoring treatment.
    BlindedFull,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReplicate {
    pub replicate: usize,
    /// Posterior mean of each effect modifier `γ_t`.
    pub gamma: IndexMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasDemoResult {
    pub mode: TrainingMode,
    pub replicates: Vec<BiasReplicate>,
}

impl BiasDemoResult {
    /// Average of every `γ̂_t` over treatments and replicates; `None` when empty.
    pub fn mean_gamma(&self) -> Option<f64> {
        let all: Vec<f64> = self.replicates.iter().flat_map(|r| r.gamma.values().copied()).collect();
        (!all.is_empty()).then(|| all.iter().sum::<f64>() / all.len() as f64)
    }
}

/// Runs both stages on `replicates` fresh datasets. Replicate `r` draws its data from
/// `derive_seed(spec.seed, r)`, so the two training modes see identical data.
pub fn bias_demo(
    spec: &GeneratorSpec,
    mode: TrainingMode,
    replicates: usize,
    stage1: &Stage1Method,
    nmr: &NmrSpec<f64>,
) -> Result<BiasDemoResult> {
    if let Some((t, _)) = spec.true_delta.iter().chain(&spec.true_gamma).find(|(_, &v)| v != 0.0) {
        return Err(SynthError::NonNullTruth(t.clone()));
    }
    spec.validate()?;
    let registry = spec.registry()?;
    let schema = spec.schema();
    let mut out = Vec::with_capacity(replicates);
    for r in 0..replicates {
        let rep_spec = GeneratorSpec { seed: derive_seed(spec.seed, r as u64), ..spec.clone() };
        let mut data = generate(&rep_spec)?.studies;
        let design = match mode {
            TrainingMode::PlaceboOnly => design_from_studies(&data, &schema, |rec| rec.treatment == spec.reference)?,
            TrainingMode::BlindedFull => design_from_studies(&data, &schema, |_| true)?,
        };
        let model = stage1.fit(&design, derive_seed(rep_spec.seed, 1))?;
        let scores = score_studies(&mut data, &schema, &model)?;
        let nmr_spec = NmrSpec { seed: derive_seed(nmr.seed, r as u64), ..nmr.clone() };
        let built = build_likelihood(&nmr_studies(&data, &scores), &registry, &nmr_spec)?;
        let posterior = sample(&built)?;
        let gamma = registry
            .non_reference()
            .filter(|t| posterior.treatments.iter().any(|p| p == t))
            .map(|t| Ok((t.to_string(), posterior.mean(&format!("gamma[{t}]"))?)))
            .collect::<Result<IndexMap<_, _>>>()?;
        out.push(BiasReplicate { replicate: r, gamma });
    }
    Ok(BiasDemoResult { mode, replicates: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::encoded_map;

    #[test]
    fn default_network_sizes() {
        let spec = GeneratorSpec::default_network(20_000, 1);
        assert_eq!(spec.n_total(), 20_000);
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn null_law_gives_even_event_rate() {
        let mut spec = GeneratorSpec::default_network(20_000, 4);
        spec.risk_coefficients.values_mut().for_each(|b| *b = 0.0);
        spec.risk_intercept = 0.0;
        spec.true_delta.clear();
        spec.true_gamma.clear();
        spec.studies.iter_mut().for_each(|s| s.intercept = 0.0);
        let g = generate(&spec).unwrap();
        let (events, n) = g
            .studies
            .iter()
            .flat_map(|s| &s.records)
            .fold((0usize, 0usize), |(e, n), r| (e + r.outcome as usize, n + 1));
        let rate = events as f64 / n as f64;
        assert!((rate - 0.5).abs() < 0.01, "{rate}");
    }

    #[test]
    fn same_seed_same_data() {
        let spec = GeneratorSpec::default_network(600, 9);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = GeneratorSpec { seed: 10, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap().studies, generate(&other).unwrap().studies);
    }

    #[test]
    fn oracle_scores_reproduce_truth() {
        let spec = GeneratorSpec::default_network(300, 2);
        let g = generate(&spec).unwrap();
        let oracle = spec.oracle_model();
        let schema = spec.schema();
        for (s, truth) in g.studies.iter().zip(&g.true_logit_risk) {
            for (r, &lr) in s.records.iter().zip(truth) {
                let score = oracle.score(&encoded_map(r, &schema).unwrap()).unwrap();
                assert_eq!(score.logit_risk, lr);
            }
        }
    }

    #[test]
    fn arm_rates_match_analytic_expectation() {
        let spec = GeneratorSpec::default_network(20_000, 5);
        let g = generate(&spec).unwrap();
        for (ss, (s, truth)) in spec.studies.iter().zip(g.studies.iter().zip(&g.true_logit_risk)) {
            let center = truth.iter().sum::<f64>() / truth.len() as f64;
            for arm in &ss.arms {
                let t = &arm.treatment;
                let h = &ss.baseline_treatment;
                let slope = spec.true_gamma0 + spec.gamma(t) - spec.gamma(h);
                let (mut expected, mut observed, mut n) = (0.0, 0.0, 0.0);
                for (r, &lr) in s.records.iter().zip(truth).filter(|(r, _)| &r.treatment == t) {
                    expected += expit(ss.intercept + spec.delta(t) - spec.delta(h) + slope * (lr - center));
                    observed += r.outcome as u8 as f64;
                    n += 1.0;
                }
                let p = expected / n;
                let se = (p * (1.0 - p) / n).sqrt();
                assert!((observed / n - p).abs() < 3.0 * se, "{} {t}: {} vs {p}", ss.study_id, observed / n);
            }
        }
    }

    #[test]
    fn zero_effect_arm_matches_placebo_rate() {
        let mut spec = GeneratorSpec::default_network(20_000, 6);
        spec.true_delta.insert("DF".into(), 0.0);
        spec.true_gamma.insert("DF".into(), 0.0);
        let g = generate(&spec).unwrap();
        let s1 = &g.studies[0];
        let rate = |t: &str| {
            let arm: Vec<&PatientRecord> = s1.records.iter().filter(|r| r.treatment == t).collect();
            arm.iter().filter(|r| r.outcome).count() as f64 / arm.len() as f64
        };
        let (a, b) = (rate("placebo"), rate("DF"));
        let se = (2.0 * 0.25 / 2750.0f64).sqrt();
        assert!((a - b).abs() < 3.0 * se, "{a} vs {b}");
    }

    #[test]
    fn spec_json_round_trip_and_validation() {
        let spec = GeneratorSpec::default_network(100, 3);
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains(r#""distribution":"bernoulli""#));
        let back: GeneratorSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);

        let mut bad = spec.clone();
        bad.true_delta.insert("placebo".into(), 0.3);
        assert!(bad.validate().is_err());
        let mut bad = spec.clone();
        bad.studies[0].arms[0].size = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn demo_requires_null_truth_and_handles_zero_replicates() {
        let spec = GeneratorSpec::default_network(400, 1);
        let err = bias_demo(&spec, TrainingMode::BlindedFull, 1, &Stage1Method::Mle, &NmrSpec::default());
        assert!(matches!(err, Err(SynthError::NonNullTruth(_))));
        let spec = GeneratorSpec::bias_scenario(400, 1);
        let res = bias_demo(&spec, TrainingMode::PlaceboOnly, 0, &Stage1Method::Mle, &NmrSpec::default()).unwrap();
        assert!(res.replicates.is_empty());
        assert_eq!(res.mean_gamma(), None);
    }
}
