use htenmr::dataset::TreatmentRegistry;
use htenmr::nmr::{build_likelihood, sample, McmcSettings, NmrPatient, NmrPosterior, NmrSpec, NmrStudy};
use htenmr::risk::{fit_mle, DesignMatrix};
use htenmr::scalar::expit;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const DELTA: f64 = -0.6;
const GAMMA0: f64 = 1.1;
const GAMMA: f64 = 0.3;

/// Two trials of placebo `P` against `A`; study-level means of the logit risks differ.
fn studies(seed: u64, per_arm: usize) -> Vec<NmrStudy<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [("s1", -0.4, -1.0), ("s2", 0.2, -0.5)]
        .iter()
        .map(|&(id, u, mean)| {
            let mut draws = Vec::new();
            for t in ["P", "A"] {
                for _ in 0..per_arm {
                    let z: f64 = rng.sample(StandardNormal);
                    draws.push((t, mean + 0.8 * z));
                }
            }
            let center = draws.iter().map(|d| d.1).sum::<f64>() / draws.len() as f64;
            let patients = draws
                .into_iter()
                .map(|(t, lr)| {
                    let (d, g) = if t == "A" { (DELTA, GAMMA) } else { (0.0, 0.0) };
                    let eta = u + d + (GAMMA0 + g) * (lr - center);
                    NmrPatient { treatment: t.to_string(), outcome: rng.random::<f64>() < expit(eta), logit_risk: lr }
                })
                .collect();
            NmrStudy { study_id: id.to_string(), baseline: "P".to_string(), patients }
        })
        .collect()
}

fn spec(seed: u64) -> NmrSpec<f64> {
    NmrSpec { mcmc: McmcSettings { chains: 2, iterations: 5000, burn_in: 1000, thin: 2 }, seed, ..NmrSpec::default() }
}

fn run(data: &[NmrStudy<f64>], reference: &str, seed: u64) -> NmrPosterior<f64> {
    let reg = TreatmentRegistry::new(["P", "A"], reference).unwrap();
    sample(&build_likelihood(data, &reg, &spec(seed)).unwrap()).unwrap()
}

fn mcse(post: &NmrPosterior<f64>, name: &str) -> f64 {
    post.summary(name).unwrap().mcse()
}

#[test]
fn common_effects_posterior_matches_interaction_mle() {
    let data = studies(1, 2500);
    let post = run(&data, "P", 7);
    assert!(post.max_r_hat() < 1.05);

    // Same model as a logistic regression: study intercepts, arm, centered risk, arm × risk.
    let mut cols = vec![Vec::new(); 4];
    let mut y = Vec::new();
    for s in &data {
        let center = s.patients.iter().map(|p| p.logit_risk).sum::<f64>() / s.patients.len() as f64;
        for p in &s.patients {
            let a = if p.treatment == "A" { 1.0 } else { 0.0 };
            let c = p.logit_risk - center;
            cols[0].push(if s.study_id == "s2" { 1.0 } else { 0.0 });
            cols[1].push(a);
            cols[2].push(c);
            cols[3].push(a * c);
            y.push(p.outcome);
        }
    }
    let names = ["s2", "A", "c", "A:c"].iter().map(|s| s.to_string()).collect();
    let mle = fit_mle(&DesignMatrix::from_columns(names, cols, &y).unwrap()).unwrap();
    let oracle = [
        ("u[s1]", mle.intercept),
        ("u[s2]", mle.intercept + mle.coefficients["s2"]),
        ("delta[A]", mle.coefficients["A"]),
        ("gamma0", mle.coefficients["c"]),
        ("gamma[A]", mle.coefficients["A:c"]),
    ];
    for (name, value) in oracle {
        let mean = post.mean(name).unwrap();
        let tol = 3.0 * mcse(&post, name);
        assert!((mean - value).abs() < tol, "{name}: posterior {mean}, MLE {value}, 3 MCSE {tol}");
    }
}

#[test]
fn relabeling_the_reference_negates_contrasts() {
    let data = studies(2, 1500);
    let by_p = run(&data, "P", 3);
    let by_a = run(&data, "A", 4);
    let close = |a: f64, b: f64, tol: f64, what: &str| assert!((a - b).abs() < tol, "{what}: {a} vs {b}");
    let tol = |x: &str, y: &str| 3.0 * (mcse(&by_p, x).powi(2) + mcse(&by_a, y).powi(2)).sqrt();
    close(by_a.mean("delta[P]").unwrap(), -by_p.mean("delta[A]").unwrap(), tol("delta[A]", "delta[P]"), "delta");
    close(by_a.mean("gamma[P]").unwrap(), -by_p.mean("gamma[A]").unwrap(), tol("gamma[A]", "gamma[P]"), "gamma");
    // The prognostic slope belongs to each study's baseline arm, which relabeling leaves alone.
    close(by_a.mean("gamma0").unwrap(), by_p.mean("gamma0").unwrap(), tol("gamma0", "gamma0"), "gamma0");
    assert_eq!(by_a.delta_draws("A").unwrap(), vec![0.0; by_a.n_draws()]);
}

#[test]
fn shifting_a_study_before_centering_changes_nothing() {
    let data = studies(3, 800);
    let mut shifted = data.clone();
    shifted[1].patients.iter_mut().for_each(|p| p.logit_risk += 0.75);
    let a = run(&data, "P", 5);
    let b = run(&shifted, "P", 5);
    for name in &a.names {
        let (x, y) = (a.mean(name).unwrap(), b.mean(name).unwrap());
        assert!((x - y).abs() < 1e-6, "{name}: {x} vs {y}");
    }
}
