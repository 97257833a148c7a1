#![allow(dead_code)]

use std::collections::BTreeMap;

use htenmr::artifact::ModelArtifact;
use htenmr::dataset::observed_ranges;
use htenmr::nmr::{build_likelihood, sample, McmcSettings, NmrSpec};
use htenmr::pipeline::{arm_scores, design_from_studies, nmr_studies, score_studies, Stage1Method};
use htenmr::prediction::{estimate_anchor, PredictOptions};
use htenmr::synth::{generate, GeneratorSpec};
use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

/// Small but complete artifact over the default synthetic network.
pub fn artifact() -> ModelArtifact {
    let spec = GeneratorSpec::default_network(1500, 5);
    let schema = spec.schema();
    let registry = spec.registry().unwrap();
    let mut studies = generate(&spec).unwrap().studies;
    let design = design_from_studies(&studies, &schema, |_| true).unwrap();
    let stage1 = Stage1Method::Mle.fit(&design, 1).unwrap();
    let scores = score_studies(&mut studies, &schema, &stage1).unwrap();
    let nmr = NmrSpec { mcmc: McmcSettings { chains: 2, iterations: 1500, burn_in: 300, thin: 5 }, ..NmrSpec::default() };
    let posterior = sample(&build_likelihood(&nmr_studies(&studies, &scores), &registry, &nmr).unwrap()).unwrap();
    let (lr, y) = arm_scores(&studies, &scores, &registry.reference);
    let anchor = estimate_anchor(&lr, &y, "reference arms").unwrap();
    let ranges = observed_ranges(&studies, &schema);
    ModelArtifact::bundle(schema, registry, ranges, stage1, posterior, anchor, PredictOptions::default()).unwrap()
}

/// Request body with normal draws for every covariate and, sometimes, a treatment subset.
pub fn random_patient(rng: &mut impl Rng, artifact: &ModelArtifact) -> Value {
    let covariates: BTreeMap<String, f64> =
        artifact.schema.iter().map(|s| (s.name.clone(), rng.sample::<f64, _>(StandardNormal))).collect();
    if rng.random_bool(0.3) {
        let t = &artifact.registry.treatments[rng.random_range(0..artifact.registry.treatments.len())];
        json!({ "covariates": covariates, "treatments": [t] })
    } else {
        json!({ "covariates": covariates })
    }
}
