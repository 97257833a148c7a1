use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use htenmr::artifact::ModelArtifact;
use htenmr::dataset::{
    load_ipd, observed_ranges, parse_schema, preprocess, schema_fingerprint, write_ipd_csv, CovariateSpec,
    MissingnessScope, PreprocessOptions, StudyDataset, TreatmentRegistry,
};
use htenmr::design::{min_sample_size, nagelkerke_to_cox_snell};
use htenmr::nmr::{build_likelihood, sample, McmcSettings, ModifierEffects, NmrSpec, RiskSlope, TreatmentEffects};
use htenmr::pipeline::{arm_scores, design_from_studies, nmr_studies, score_studies, Stage1Method};
use htenmr::prediction::{emit_curves, estimate_anchor, nnt, risk_grid, risk_group_summary, PredictOptions};
use htenmr::risk::{FitMethod, LassoCvOptions, RiskModel};
use htenmr::synth::{bias_demo, generate, GeneratorSpec, TrainingMode};
use htenmr::validation::{bootstrap_validate, BootstrapOptions};
use htenmr::{NmrPosterior, PredictionAnchor};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::cli::{Command, DataArgs, EffectsArg, McmcArgs, MethodArg, ModeArg, ModifierArg, ScenarioArg, SlopeArg, TrainArg};
use crate::service::{handle_predict, serve, PatientRequest, ServiceState};

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_schema(path: &Path) -> Result<Vec<CovariateSpec>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_schema(&text).with_context(|| format!("schema {}", path.display()))
}

struct Loaded {
    schema: Vec<CovariateSpec>,
    registry: TreatmentRegistry,
    studies: Vec<StudyDataset>,
}

fn load(args: &DataArgs) -> Result<Loaded> {
    let schema = read_schema(&args.schema)?;
    let reference = args.reference.clone().unwrap_or_else(|| args.treatments[0].clone());
    let registry = TreatmentRegistry::new(args.treatments.clone(), &reference)?;
    let studies = load_ipd(&args.data, &schema, &registry).with_context(|| format!("reading {}", args.data.display()))?;
    if studies.is_empty() {
        bail!("{} holds no records", args.data.display());
    }
    Ok(Loaded { schema, registry, studies })
}

fn load_model(path: &Path, schema: &[CovariateSpec]) -> Result<RiskModel<f64>> {
    let model: RiskModel<f64> = read_json(path)?;
    if let Some(fp) = &model.schema_fingerprint {
        if *fp != schema_fingerprint(schema) {
            bail!("{} was fitted against a different schema", path.display());
        }
    }
    Ok(model)
}

fn stage1_method(method: MethodArg, folds: usize) -> Stage1Method {
    match method {
        MethodArg::Lasso => Stage1Method::Lasso(LassoCvOptions { folds, ..Default::default() }),
        MethodArg::Prespecified => Stage1Method::prespecified(),
        MethodArg::Mle => Stage1Method::Mle,
    }
}

fn training_design(data: &Loaded, train: TrainArg) -> Result<htenmr::DesignMatrix> {
    let reference = data.registry.reference.clone();
    Ok(design_from_studies(&data.studies, &data.schema, |r| train == TrainArg::All || r.treatment == reference)?)
}

fn mcmc(args: &McmcArgs) -> McmcSettings {
    McmcSettings { chains: args.chains, iterations: args.iters, burn_in: args.burnin, thin: args.thin }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Preprocess {
            data,
            missing_threshold,
            corr_threshold,
            per_study,
            out,
            out_schema,
            out_input_schema,
            report,
        } => {
            let loaded = load(&data)?;
            let options = PreprocessOptions {
                missing_threshold,
                corr_threshold,
                missingness_scope: if per_study { MissingnessScope::PerStudy } else { MissingnessScope::Pooled },
            };
            let (clean, rep) = preprocess(&loaded.studies, &loaded.schema, &loaded.registry, &options)?;
            let cleaned = rep.cleaned_schema();
            let names: Vec<String> = cleaned.iter().map(|s| s.name.clone()).collect();
            write_ipd_csv(&out, &clean, &names)?;
            write_json(&out_schema, &cleaned)?;
            if let Some(path) = out_input_schema {
                write_json(&path, &rep.retained)?;
            }
            for d in &rep.dropped {
                eprintln!("dropped {}: {}", d.name, d.detail);
            }
            eprintln!("records {} -> {}, covariates kept {}", rep.records_in, rep.records_out, rep.retained.len());
            if let Some(path) = report {
                write_json(&path, &rep)?;
            }
        }
        Command::Samplesize { df, prevalence, r2_nagelkerke, r2_cox_snell, shrinkage, delta, available, events, json } => {
            let r2 = match (r2_nagelkerke, r2_cox_snell) {
                (Some(r2n), _) => nagelkerke_to_cox_snell(r2n, prevalence)?,
                (None, Some(r2)) => r2,
                (None, None) => bail!("one of --r2-nagelkerke and --r2-cox-snell is required"),
            };
            let mut report = min_sample_size(df, prevalence, r2, shrinkage, delta)?;
            if let Some(r2n) = r2_nagelkerke {
                report = report.with_nagelkerke(r2n);
            }
            if let (Some(n), Some(e)) = (available, events) {
                report = report.with_available(n, e);
            }
            print!("{}", report.table());
            if let Some(path) = json {
                write_json(&path, &report)?;
            }
        }
        Command::FitRisk { data, method, folds, seed, train, out } => {
            let loaded = load(&data)?;
            let design = training_design(&loaded, train)?;
            let mut model = stage1_method(method, folds).fit(&design, seed)?;
            model.schema_fingerprint = Some(schema_fingerprint(&loaded.schema));
            eprintln!("{:?} fit on {} records ({} events), {} non-zero coefficients", model.method, model.n, model.events, model.support().len());
            write_json(&out, &model)?;
        }
        Command::Validate { data, model, bootstrap, seed, folds, train, by_study, out } => {
            let loaded = load(&data)?;
            let mut fitted = load_model(&model, &loaded.schema)?;
            let method = match fitted.method {
                FitMethod::Mle => Stage1Method::Mle,
                FitMethod::Lasso => stage1_method(MethodArg::Lasso, folds),
                FitMethod::PenalizedMle => Stage1Method::prespecified(),
            };
            let design = training_design(&loaded, train)?;
            let strata = by_study.then(|| {
                let reference = &loaded.registry.reference;
                loaded
                    .studies
                    .iter()
                    .enumerate()
                    .flat_map(|(k, s)| {
                        s.records.iter().filter(move |r| train == TrainArg::All || &r.treatment == reference).map(move |_| k)
                    })
                    .collect()
            });
            let procedure = |d: &htenmr::DesignMatrix, s: u64| method.fit(d, s);
            let report = bootstrap_validate(&design, &procedure, &BootstrapOptions { resamples: bootstrap, seed, strata })?;
            print!("{}", report.table());
            fitted.validation = Some(report);
            write_json(out.as_deref().unwrap_or(&model), &fitted)?;
        }
        Command::FitNmr {
            data,
            model,
            mcmc: m,
            seed,
            treatment_effects,
            modifier_effects,
            risk_slope,
            prior_variance,
            heterogeneity_scale,
            out,
        } => {
            let mut loaded = load(&data)?;
            let risk = load_model(&model, &loaded.schema)?;
            let spec = NmrSpec {
                treatment_effects: match treatment_effects {
                    EffectsArg::Common => TreatmentEffects::Common,
                    EffectsArg::Random => TreatmentEffects::Random,
                },
                modifier_effects: match modifier_effects {
                    ModifierArg::Common => ModifierEffects::Common,
                    ModifierArg::Random => ModifierEffects::Random,
                    ModifierArg::Omitted => ModifierEffects::Omitted,
                },
                risk_slope: match risk_slope {
                    SlopeArg::Common => RiskSlope::Common,
                    SlopeArg::Exchangeable => RiskSlope::Exchangeable,
                    SlopeArg::Independent => RiskSlope::Independent,
                    SlopeArg::Omitted => RiskSlope::Omitted,
                },
                prior_variance,
                heterogeneity_scale,
                mcmc: mcmc(&m),
                seed,
            };
            let scores = score_studies(&mut loaded.studies, &loaded.schema, &risk)?;
            let built = build_likelihood(&nmr_studies(&loaded.studies, &scores), &loaded.registry, &spec)?;
            let mut posterior = sample(&built)?;
            posterior.stage1_fingerprint = Some(risk.fingerprint());
            println!("{:<22}{:>10}{:>10}{:>10}{:>10}{:>8}{:>8}", "parameter", "mean", "sd", "2.5%", "97.5%", "R-hat", "ESS");
            for s in &posterior.diagnostics {
                println!(
                    "{:<22}{:>10.4}{:>10.4}{:>10.4}{:>10.4}{:>8.3}{:>8.0}",
                    s.name, s.mean, s.sd, s.q025, s.q975, s.r_hat, s.ess
                );
            }
            println!("retained draws: {}", posterior.n_draws());
            if posterior.max_r_hat() >= 1.05 {
                eprintln!("warning: largest R-hat {:.3} is at or above 1.05", posterior.max_r_hat());
            }
            write_json(&out, &posterior)?;
        }
        Command::Anchor { data, model, arm, out } => {
            let mut loaded = load(&data)?;
            let risk = load_model(&model, &loaded.schema)?;
            let arm = arm.unwrap_or_else(|| loaded.registry.reference.clone());
            if !loaded.registry.contains(&arm) {
                bail!("unknown treatment '{arm}'");
            }
            let scores = score_studies(&mut loaded.studies, &loaded.schema, &risk)?;
            let (lr, y) = arm_scores(&loaded.studies, &scores, &arm);
            let mut anchor = estimate_anchor(&lr, &y, format!("{arm} arms"))?;
            anchor.stage1_fingerprint = Some(risk.fingerprint());
            eprintln!("anchor a = {:.4} (se {:.4}) on {} records", anchor.alpha, anchor.alpha_se, anchor.n);
            write_json(&out, &anchor)?;
        }
        Command::Bundle { data, model, posterior, anchor, input_schema, cutoffs, seed, fixed_anchor, out } => {
            let loaded = load(&data)?;
            let risk = load_model(&model, &loaded.schema)?;
            let posterior: NmrPosterior = read_json(&posterior)?;
            let anchor: PredictionAnchor = read_json(&anchor)?;
            let schema = match &input_schema {
                Some(path) => read_schema(path)?,
                None => loaded.schema.clone(),
            };
            // Ranges are reported on the raw input scale, so only untransformed covariates get one.
            let mut ranges = observed_ranges(&loaded.studies, &loaded.schema);
            ranges.retain(|name, _| {
                schema.iter().any(|s| &s.name == name && s.transform == htenmr::dataset::Transform::None)
            });
            let predict = PredictOptions { seed, fixed_anchor, cutoffs: (cutoffs[0], cutoffs[1]) };
            let artifact = ModelArtifact::bundle(schema, loaded.registry, ranges, risk, posterior, anchor, predict)?;
            artifact.save(&out)?;
            eprintln!("artifact {} (stage-one fingerprint {})", out.display(), &artifact.fingerprint[..12]);
        }
        Command::Predict { artifact, patient, out } => {
            let state = ServiceState::new(ModelArtifact::load(&artifact)?)?;
            let body = fs::read(&patient).with_context(|| format!("reading {}", patient.display()))?;
            let request = PatientRequest::parse(&body).map_err(|e| anyhow!("{}: {e}", patient.display()))?;
            let result = handle_predict(&state, &request).map_err(|e| anyhow!("{e}"))?;
            let text = serde_json::to_string(&result)?;
            match out {
                Some(path) => fs::write(&path, text + "\n")?,
                None => println!("{text}"),
            }
            for t in result.treatments.iter().filter(|t| !t.reference) {
                let reference = result.treatments.iter().find(|r| r.reference).expect("reference included");
                let n = nnt(reference.probability - t.probability);
                eprintln!(
                    "{:<12} p = {:.3} [{:.3}, {:.3}]  OR = {:.3}  NNT = {}",
                    t.treatment,
                    t.probability,
                    t.cr_low,
                    t.cr_high,
                    t.odds_ratio,
                    n.count.map(|c| format!("{c} ({})", serde_json::to_value(n.direction).unwrap_or_default().as_str().unwrap_or(""))).unwrap_or_else(|| "-".into())
                );
            }
        }
        Command::Curves { artifact, grid, population, groups_out, out } => {
            let artifact = ModelArtifact::load(&artifact)?;
            let predictor = artifact.predictor()?;
            let population: Option<Vec<f64>> = match &population {
                Some(path) => {
                    let studies = load_ipd(path, &artifact.schema, &artifact.registry)?;
                    let mut lr = Vec::new();
                    for r in studies.iter().flat_map(|s| &s.records) {
                        lr.push(artifact.score(&r.covariates)?.logit_risk);
                    }
                    Some(lr)
                }
                None => None,
            };
            let curves = emit_curves(&predictor, &risk_grid(grid), population.as_deref())?;
            fs::write(&out, curves.to_csv())?;
            if let (Some(path), Some(lr)) = (groups_out, &population) {
                let preds = lr.iter().map(|&x| predictor.predict(x, None)).collect::<Result<Vec<_>, _>>()?;
                let rows = risk_group_summary(&preds, artifact.predict.cutoffs)?;
                let table: Vec<_> = rows
                    .iter()
                    .map(|row| {
                        let reference = row.treatments.iter().find(|t| t.treatment == predictor.reference());
                        let treatments: Vec<_> = row
                            .treatments
                            .iter()
                            .map(|t| {
                                let ard = reference.map(|r| r.mean_probability - t.mean_probability);
                                json!({
                                    "treatment": t.treatment,
                                    "mean_probability": t.mean_probability,
                                    "mean_odds_ratio": t.mean_odds_ratio,
                                    "absolute_risk_difference": ard,
                                    "nnt": ard.filter(|_| t.treatment != predictor.reference()).map(nnt),
                                })
                            })
                            .collect();
                        json!({ "group": row.group, "patients": row.patients, "treatments": treatments })
                    })
                    .collect();
                write_json(&path, &table)?;
            }
        }
        Command::Simulate { spec, scenario, n, seed, out, out_schema, out_spec } => {
            let spec = match spec {
                Some(path) => read_json(&path)?,
                None => match scenario {
                    ScenarioArg::Default => GeneratorSpec::default_network(n, seed),
                    ScenarioArg::Bias => GeneratorSpec::bias_scenario(n, seed),
                },
            };
            let generated = generate(&spec)?;
            let names: Vec<String> = spec.covariates.iter().map(|c| c.name.clone()).collect();
            write_ipd_csv(&out, &generated.studies, &names)?;
            if let Some(path) = out_schema {
                write_json(&path, &spec.schema())?;
            }
            if let Some(path) = out_spec {
                write_json(&path, &spec)?;
            }
            eprintln!(
                "{} records in {} studies; treatments {} (reference {})",
                spec.n_total(),
                spec.studies.len(),
                spec.treatments.join(","),
                spec.reference
            );
        }
        Command::BiasDemo { mode, replicates, spec, n, seed, stage1, folds, mcmc: m, out } => {
            let spec = match spec {
                Some(path) => read_json(&path)?,
                None => GeneratorSpec::bias_scenario(n, seed),
            };
            let nmr = NmrSpec { mcmc: mcmc(&m), seed, ..NmrSpec::default() };
            let method = stage1_method(stage1, folds);
            let modes = match mode {
                ModeArg::PlaceboOnly => vec![TrainingMode::PlaceboOnly],
                ModeArg::BlindedFull => vec![TrainingMode::BlindedFull],
                ModeArg::Both => vec![TrainingMode::PlaceboOnly, TrainingMode::BlindedFull],
            };
            let mut results = Vec::new();
            for mode in modes {
                let r = bias_demo(&spec, mode, replicates, &method, &nmr)?;
                match r.mean_gamma() {
                    Some(g) => println!("{:?}: mean effect modifier {g:+.4} over {} replicates", mode, replicates),
                    None => println!("{:?}: no replicates", mode),
                }
                results.push(r);
            }
            match out {
                Some(path) => write_json(&path, &results)?,
                None => {
                    let mut stdout = std::io::stdout().lock();
                    serde_json::to_writer_pretty(&mut stdout, &results)?;
                    writeln!(stdout)?;
                }
            }
        }
        Command::Serve { artifact, port, host } => {
            let port = match std::env::var("HTE_PORT") {
                Ok(v) => v.parse().with_context(|| format!("HTE_PORT={v} is not a port"))?,
                Err(_) => port,
            };
            let addr: SocketAddr = format!("{host}:{port}").parse().with_context(|| format!("bad address {host}:{port}"))?;
            let state = Arc::new(ServiceState::new(ModelArtifact::load(&artifact)?)?);
            tokio::runtime::Runtime::new()?.block_on(serve(state, addr))?;
        }
    }
    Ok(())
}
