//! One PASS/FAIL line per acceptance criterion, written straight to stdout so it shows
//! without `--nocapture`. Slow criteria dominate: expect roughly ten minutes in total.

mod common;

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use htenmr::artifact::ModelArtifact;
use htenmr::design::{epv, min_sample_size, nagelkerke_to_cox_snell};
use htenmr::nmr::{
    build_likelihood, sample, McmcSettings, ModifierEffects, NmrPatient, NmrPosterior, NmrSpec, NmrStudy, RiskSlope,
};
use htenmr::pipeline::{nmr_studies, score_studies, Stage1Method};
use htenmr::prediction::{nnt, predict, PredictOptions, PredictionAnchor};
use htenmr::risk::{fit_lasso, fit_mle, kkt_violation, lambda_grid, lambda_max, LassoCvOptions};
use htenmr::DesignMatrix;
use htenmr::scalar::{expit, logit};
use htenmr::synth::{bias_demo, generate, GeneratorSpec, TrainingMode};
use htenmr::dataset::TreatmentRegistry;
use htenmr::validation::{bootstrap_validate, c_statistic, calibration_slope, BootstrapOptions};
use htenmr_cli::service::{handle_predict, router, PatientRequest, ServiceState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn report(criterion: &str, pass: bool, detail: String, started: Instant) {
    let line = format!(
        "{} {criterion}: {detail} ({:.1} s)\n",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(pass, "{criterion}: {detail}");
}

fn logistic_design(seed: u64, n: usize, beta: &[f64], intercept: f64) -> DesignMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols: Vec<Vec<f64>> = beta.iter().map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let y: Vec<bool> = (0..n)
        .map(|i| {
            let eta = intercept + beta.iter().zip(&cols).map(|(b, c)| b * c[i]).sum::<f64>();
            rng.random::<f64>() < expit(eta)
        })
        .collect();
    let names = (1..=beta.len()).map(|k| format!("x{k}")).collect();
    DesignMatrix::from_columns(names, cols, &y).unwrap()
}

fn beta_vec(p: usize, seed: u64) -> Vec<f64> {
    (0..p).map(|k| ((seed as usize * 7 + k * 13) % 11) as f64 / 10.0 - 0.5).collect()
}

#[test]
fn sample_size_anchors() {
    let t = Instant::now();
    let r2: f64 = nagelkerke_to_cox_snell(0.15, 0.371).unwrap();
    let n14 = min_sample_size(14, 0.371, r2, 0.9, 0.05).unwrap().n_min.unwrap();
    let n45 = min_sample_size(45, 0.371, r2, 0.9, 0.05).unwrap().n_min.unwrap();
    let (e45, e14): (f64, f64) = (epv(742, 45).unwrap(), epv(742, 14).unwrap());
    let pass = (r2 - 0.110).abs() <= 0.001
        && n14.abs_diff(1076) <= 5
        && n45.abs_diff(3456) <= 10
        && e45 == 742.0 / 45.0
        && (e45 * 10.0).round() / 10.0 == 16.5
        && e14 == 53.0;
    report("sample size", pass, format!("R2_cs {r2:.4}, n(14) {n14}, n(45) {n45}, EPV {e45:.2} / {e14}"), t);
}

#[test]
fn nnt_anchors() {
    let t = Instant::now();
    let (a, b) = (nnt(0.15).count, nnt(0.10).count);
    report("NNT", a == Some(7) && b == Some(10), format!("0.15 -> {a:?}, 0.10 -> {b:?}"), t);
}

#[test]
fn lasso_correctness() {
    let t = Instant::now();
    let (mut worst_gap, mut worst_kkt, mut null_exact) = (0.0f64, 0.0f64, true);
    for seed in 0..10 {
        let d = logistic_design(1000 + seed, 500, &beta_vec(10, seed), -0.2);
        let mle = fit_mle(&d).unwrap();
        let at_zero = fit_lasso(&d, &[0.0]).unwrap().model(&d, 0);
        worst_gap = worst_gap.max((at_zero.intercept - mle.intercept).abs());
        for (a, b) in at_zero.coefficients.values().zip(mle.coefficients.values()) {
            worst_gap = worst_gap.max((a - b).abs());
        }
        let lmax = lambda_max(&d);
        let path = fit_lasso(&d, &lambda_grid(lmax, 50, 1e-3)).unwrap();
        for pt in &path.points {
            worst_kkt = worst_kkt.max(kkt_violation(&d, pt));
        }
        for lambda in [lmax, 3.0 * lmax] {
            let m = fit_lasso(&d, &[lambda]).unwrap().model(&d, 0);
            let rate = d.events() as f64 / d.n() as f64;
            null_exact &= m.coefficients.values().all(|&b| b == 0.0) && (m.intercept - logit(rate)).abs() < 1e-12;
        }
    }
    let pass = worst_gap <= 1e-4 && worst_kkt <= 1e-6 && null_exact && t.elapsed().as_secs() < 30;
    report(
        "LASSO correctness",
        pass,
        format!("max |lasso(0) - MLE| {worst_gap:.2e}, max KKT residual {worst_kkt:.2e}, null above lambda_max {null_exact}"),
        t,
    );
}

fn pairwise_c(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in (0..scores.len()).filter(|&i| labels[i]) {
        for j in (0..scores.len()).filter(|&j| !labels[j]) {
            den += 1.0;
            num += if scores[i] > scores[j] {
                1.0
            } else if scores[i] == scores[j] {
                0.5
            } else {
                0.0
            };
        }
    }
    num / den
}

#[test]
fn calibration_and_c_statistic() {
    let t = Instant::now();
    let (mut worst_slope, mut c_exact) = (0.0f64, true);
    for seed in 0..20 {
        let d = logistic_design(2000 + seed, 500, &beta_vec(6, seed), 0.1);
        let m = fit_mle(&d).unwrap();
        let lp = m.linear_predictor(&d);
        worst_slope = worst_slope.max((calibration_slope(&lp, &d.outcomes()).unwrap() - 1.0).abs());
        // Coarsened scores exercise ties.
        let coarse: Vec<f64> = lp.iter().map(|x| (x * 3.0).round()).collect();
        for scores in [&lp, &coarse] {
            c_exact &= c_statistic(scores, &d.outcomes()).unwrap() == pairwise_c(scores, &d.outcomes());
        }
    }
    report(
        "calibration slope and c-statistic",
        worst_slope <= 1e-6 && c_exact,
        format!("max |slope - 1| {worst_slope:.2e}, c equals pairwise oracle on 20 instances: {c_exact}"),
        t,
    );
}

#[test]
fn bootstrap_validation() {
    let t = Instant::now();
    let lasso = Stage1Method::Lasso(LassoCvOptions::default());
    let procedure = |d: &DesignMatrix, s: u64| lasso.fit(d, s);

    let d = logistic_design(7, 300, &[0.8, -0.5, 0.0, 0.2], 0.0);
    let opts = BootstrapOptions { resamples: 30, seed: 3, strata: None };
    let a = bootstrap_validate(&d, &procedure, &opts).unwrap();
    let b = bootstrap_validate(&d, &procedure, &opts).unwrap();
    let identity = a.c_corrected == a.c_apparent - a.optimism_c;
    let reproducible = a == b;

    let mut corrected = Vec::new();
    for rep in 0..20 {
        let noise = logistic_design(5000 + rep, 400, &[0.0; 20], 0.0);
        let r = bootstrap_validate(&noise, &procedure, &BootstrapOptions { resamples: 200, seed: rep, strata: None }).unwrap();
        corrected.push(r.c_corrected);
    }
    let mean = corrected.iter().sum::<f64>() / corrected.len() as f64;
    let pass = identity && reproducible && (mean - 0.5).abs() <= 0.03 && t.elapsed().as_secs() < 600;
    report(
        "bootstrap validation",
        pass,
        format!("identity {identity}, same-seed identical {reproducible}, noise c_corrected mean {mean:.4} over 20"),
        t,
    );
}

#[test]
fn nmr_recovery() {
    let t = Instant::now();
    let spec = GeneratorSpec::default_network(20_000, 11);
    let schema = spec.schema();
    let registry = spec.registry().unwrap();
    let mut studies = generate(&spec).unwrap().studies;
    // Stage one at the generating law, so the check isolates stage two.
    let oracle = spec.oracle_model();
    let scores = score_studies(&mut studies, &schema, &oracle).unwrap();
    let post = sample(&build_likelihood(&nmr_studies(&studies, &scores), &registry, &NmrSpec::default()).unwrap()).unwrap();
    let mut worst = (String::new(), 0.0f64);
    let mut check = |name: String, truth: f64| {
        let err = (post.mean(&name).unwrap() - truth).abs();
        if err > worst.1 {
            worst = (name, err);
        }
    };
    check("gamma0".into(), spec.true_gamma0);
    for t in ["DF", "GA", "N"] {
        check(format!("delta[{t}]"), spec.delta(t));
        check(format!("gamma[{t}]"), spec.gamma(t));
    }
    let r_hat = post.max_r_hat();
    let pass = worst.1 <= 0.1 && r_hat < 1.05 && post.n_draws() == 1800 && t.elapsed().as_secs() < 600;
    report(
        "NMR recovery",
        pass,
        format!("largest error {:.4} ({}), max R-hat {r_hat:.3}, retained draws {}", worst.1, worst.0, post.n_draws()),
        t,
    );
}

#[test]
fn two_arm_matches_table_log_odds_ratio() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 10_000;
    let mut patients = Vec::new();
    let mut events = [0usize; 2];
    for (k, (arm, p)) in [("A", 0.30), ("B", 0.22)].into_iter().enumerate() {
        for _ in 0..n {
            let y = rng.random::<f64>() < p;
            events[k] += y as usize;
            patients.push(NmrPatient { treatment: arm.into(), outcome: y, logit_risk: 0.0 });
        }
    }
    let studies = vec![NmrStudy { study_id: "trial".into(), baseline: "A".into(), patients }];
    let registry = TreatmentRegistry::new(["A", "B"], "A").unwrap();
    let spec = NmrSpec { modifier_effects: ModifierEffects::Omitted, risk_slope: RiskSlope::Omitted, ..NmrSpec::default() };
    let post = sample(&build_likelihood(&studies, &registry, &spec).unwrap()).unwrap();
    let odds = |e: usize| e as f64 / (n - e) as f64;
    let log_or = (odds(events[1]) / odds(events[0])).ln();
    let d = post.mean("delta[B]").unwrap();
    report(
        "two-arm log odds ratio",
        (d - log_or).abs() <= 0.05,
        format!("posterior mean {d:.4}, table log OR {log_or:.4}"),
        t,
    );
}

#[test]
fn hand_evaluated_prediction() {
    let t = Instant::now();
    let names = ["delta[N]", "gamma0", "gamma[N]"];
    let values = [-1.22, 1.26, -0.26];
    let post: NmrPosterior<f64> = NmrPosterior {
        names: names.iter().map(|s| s.to_string()).collect(),
        chains: 2,
        draws_per_chain: 2,
        draws: (0..4).flat_map(|_| values).collect(),
        diagnostics: Vec::new(),
        spec: NmrSpec { mcmc: McmcSettings { chains: 2, iterations: 2, burn_in: 0, thin: 1 }, ..NmrSpec::default() },
        treatments: vec!["placebo".into(), "N".into()],
        reference: "placebo".into(),
        centering: Default::default(),
        stage1_fingerprint: None,
    };
    let anchor = PredictionAnchor {
        alpha: -0.3,
        alpha_se: 0.0,
        mean_logit_risk: -0.8,
        slope: None,
        n: 1,
        events: 1,
        source: "hand case".into(),
        stage1_fingerprint: None,
    };
    let res = predict(-0.8 + 1.0, &post, &anchor, &PredictOptions { fixed_anchor: true, ..Default::default() }).unwrap();
    let p: f64 = res.get("N").unwrap().probability;
    report("hand-evaluated prediction", (p - 0.373).abs() <= 0.001, format!("p = {p:.4}"), t);
}

#[test]
fn training_set_bias_demo() {
    let t = Instant::now();
    let spec = GeneratorSpec::bias_scenario(4000, 1);
    let nmr = NmrSpec::default();
    let placebo = bias_demo(&spec, TrainingMode::PlaceboOnly, 20, &Stage1Method::Mle, &nmr).unwrap();
    let blinded = bias_demo(&spec, TrainingMode::BlindedFull, 20, &Stage1Method::Mle, &nmr).unwrap();
    let (gp, gb) = (placebo.mean_gamma().unwrap(), blinded.mean_gamma().unwrap());
    let pass = gb.abs() <= 0.1 && gb.abs() < gp.abs() && t.elapsed().as_secs() < 1800;
    report(
        "training-set bias demo",
        pass,
        format!("mean effect modifier: blinded {gb:+.4}, placebo-only {gp:+.4} over 20 paired replicates"),
        t,
    );
}

#[test]
fn artifact_round_trip_through_service() {
    let t = Instant::now();
    let original = common::artifact();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("artifact.json");
    original.save(&path).unwrap();
    let loaded = ModelArtifact::load(&path).unwrap();
    let served = Arc::new(ServiceState::new(loaded).unwrap());
    let local = ServiceState::new(original).unwrap();

    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let url = format!("http://{}/predict", listener.local_addr().unwrap());
    rt.spawn(async move { axum::serve(listener, router(served)).await.unwrap() });
    let client = reqwest::Client::new();

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut identical = 0;
    for _ in 0..100 {
        let body = serde_json::to_vec(&common::random_patient(&mut rng, local.artifact())).unwrap();
        let remote = rt.block_on(async { client.post(&url).body(body.clone()).send().await?.bytes().await }).unwrap();
        let expected = serde_json::to_string(&handle_predict(&local, &PatientRequest::parse(&body).unwrap()).unwrap()).unwrap();
        identical += (remote.as_ref() == expected.as_bytes()) as usize;
    }
    report("artifact round-trip", identical == 100, format!("{identical}/100 byte-identical responses"), t);
}

