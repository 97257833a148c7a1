use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::diagnostics::summarize;
use super::model::{combine, NmrModel, ParameterRole};
use super::{NmrError, NmrPosterior, Result};
use crate::scalar::Scalar;
use crate::seeds::derive_seed;

const TARGET_ACCEPTANCE: f64 = 0.44;
const MIN_ACCEPTANCE: f64 = 0.01;

struct ChainOutput<T> {
    draws: Vec<T>,
    acceptance: Vec<f64>,
}

/// Starting proposal scale from the curvature of the likelihood at a centered logit.
fn initial_scales<T: Scalar>(model: &NmrModel<T>) -> Vec<f64> {
    let mut info = vec![0.0f64; model.names.len()];
    for cell in &model.cells {
        let n = cell.centered.len() as f64;
        let ss: f64 = cell.centered.iter().map(|c| c.as_f64() * c.as_f64()).sum();
        for &(k, c) in &cell.intercept {
            info[k] += 0.25 * n * c.as_f64() * c.as_f64();
        }
        for &(k, c) in &cell.slope {
            info[k] += 0.25 * ss * c.as_f64() * c.as_f64();
        }
    }
    info.iter()
        .zip(&model.roles)
        .map(|(&i, role)| match role {
            ParameterRole::Sigma => 0.5,
            _ => 2.4 / (i + 1.0).sqrt(),
        })
        .collect()
}

fn run_chain<T: Scalar>(model: &NmrModel<T>, chain: usize) -> Result<ChainOutput<T>> {
    let spec = &model.spec;
    let mcmc = spec.mcmc;
    let width = model.names.len();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, chain as u64));
    let mut theta = vec![T::zero(); width];
    if !model.log_posterior(&theta).is_finite() {
        return Err(NmrError::NonFiniteStart);
    }
    let mut cell_ll: Vec<T> = model
        .cells
        .iter()
        .map(|c| c.log_likelihood(combine(&c.intercept, &theta), combine(&c.slope, &theta)))
        .collect();
    let mut log_scale: Vec<f64> = initial_scales(model).iter().map(|s| s.ln()).collect();
    let mut accepted = vec![0usize; width];
    let mut scratch: Vec<T> = Vec::new();
    let mut draws = Vec::with_capacity(mcmc.retained_per_chain() * width);

    for it in 1..=mcmc.iterations {
        let adapting = it <= mcmc.burn_in;
        let gain = (it as f64).powf(-0.6);
        for k in 0..width {
            let old = theta[k];
            let z: f64 = rng.sample(StandardNormal);
            let proposal = old + T::lit(log_scale[k].exp() * z);

            let mut delta = T::zero();
            for &t in &model.param_priors[k] {
                delta = delta - model.log_prior_term(&model.priors[t], &theta);
            }
            theta[k] = proposal;
            for &t in &model.param_priors[k] {
                delta = delta + model.log_prior_term(&model.priors[t], &theta);
            }
            scratch.clear();
            for &ci in &model.param_cells[k] {
                let cell = &model.cells[ci];
                let ll = cell.log_likelihood(combine(&cell.intercept, &theta), combine(&cell.slope, &theta));
                delta = delta + ll - cell_ll[ci];
                scratch.push(ll);
            }

            let u: f64 = rng.random();
            let accept = delta.is_finite() && u.ln() < delta.as_f64();
            if accept {
                for (&ci, &ll) in model.param_cells[k].iter().zip(&scratch) {
                    cell_ll[ci] = ll;
                }
            } else {
                theta[k] = old;
            }
            if adapting {
                let hit = if accept { 1.0 } else { 0.0 };
                log_scale[k] += gain * (hit - TARGET_ACCEPTANCE);
            } else if accept {
                accepted[k] += 1;
            }
        }
        if !adapting && (it - mcmc.burn_in) % mcmc.thin == 0 {
            for (k, &v) in theta.iter().enumerate() {
                draws.push(if model.roles[k] == ParameterRole::Sigma { v.exp() } else { v });
            }
        }
    }

    let post = (mcmc.iterations - mcmc.burn_in) as f64;
    let acceptance: Vec<f64> = accepted.iter().map(|&a| a as f64 / post).collect();
    if let Some(k) = acceptance.iter().position(|&a| a < MIN_ACCEPTANCE) {
        return Err(NmrError::StuckChain { parameter: model.names[k].clone(), chain, acceptance: acceptance[k] });
    }
    Ok(ChainOutput { draws, acceptance })
}

/// Component-wise adaptive random-walk Metropolis. Proposal scales adapt towards 0.44
/// acceptance during burn-in and stay frozen afterwards; chains use independent streams
/// derived from `(seed, chain)`, so results do not depend on the thread count.
pub fn sample<T: Scalar>(model: &NmrModel<T>) -> Result<NmrPosterior<T>> {
    let mcmc = model.spec.mcmc;
    mcmc.validate()?;
    let outputs: Vec<Result<ChainOutput<T>>> = (0..mcmc.chains).into_par_iter().map(|c| run_chain(model, c)).collect();
    let mut draws = Vec::with_capacity(mcmc.retained() * model.names.len());
    let mut acceptance = vec![0.0; model.names.len()];
    for out in outputs {
        let out = out?;
        draws.extend(out.draws);
        for (a, b) in acceptance.iter_mut().zip(&out.acceptance) {
            *a += b / mcmc.chains as f64;
        }
    }
    let per_chain = mcmc.retained_per_chain();
    let diagnostics = summarize(&model.names, mcmc.chains, per_chain, &draws, &acceptance)?;
    Ok(NmrPosterior {
        names: model.names.clone(),
        chains: mcmc.chains,
        draws_per_chain: per_chain,
        draws,
        diagnostics,
        spec: model.spec.clone(),
        treatments: model.treatments.clone(),
        reference: model.reference.clone(),
        centering: model.centering.clone(),
        stage1_fingerprint: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TreatmentRegistry;
    use crate::nmr::{build_likelihood, McmcSettings, ModifierEffects, NmrPatient, NmrSpec, NmrStudy, RiskSlope};

    fn two_arm(n: usize) -> Vec<NmrStudy<f64>> {
        let mut patients = Vec::new();
        for i in 0..n {
            patients.push(NmrPatient { treatment: "A".into(), outcome: i % 3 == 0, logit_risk: 0.0 });
            patients.push(NmrPatient { treatment: "B".into(), outcome: i % 2 == 0, logit_risk: 0.0 });
        }
        vec![NmrStudy { study_id: "s".into(), baseline: "A".into(), patients }]
    }

    fn spec(seed: u64) -> NmrSpec<f64> {
        NmrSpec {
            modifier_effects: ModifierEffects::Omitted,
            risk_slope: RiskSlope::Omitted,
            mcmc: McmcSettings { chains: 2, iterations: 600, burn_in: 100, thin: 5 },
            seed,
            ..NmrSpec::default()
        }
    }

    #[test]
    fn same_seed_same_draws() {
        let reg = TreatmentRegistry::new(["A", "B"], "A").unwrap();
        let model = build_likelihood(&two_arm(300), &reg, &spec(9)).unwrap();
        let a = sample(&model).unwrap();
        let b = sample(&model).unwrap();
        assert_eq!(a.draws, b.draws);
        assert_eq!(a.n_draws(), 200);
        let c = sample(&build_likelihood(&two_arm(300), &reg, &spec(10)).unwrap()).unwrap();
        assert_ne!(a.draws, c.draws);
    }

    #[test]
    fn posterior_near_table_log_odds_ratio() {
        let reg = TreatmentRegistry::new(["A", "B"], "A").unwrap();
        let mut s = spec(3);
        s.mcmc = McmcSettings { chains: 2, iterations: 3000, burn_in: 500, thin: 5 };
        let post = sample(&build_likelihood(&two_arm(3000), &reg, &s).unwrap()).unwrap();
        // Events: A 1000/3000, B 1500/3000.
        let log_or = (1500.0f64 / 1500.0).ln() - (1000.0f64 / 2000.0).ln();
        let d = post.mean("delta[B]").unwrap();
        assert!((d - log_or).abs() < 0.03, "{d} vs {log_or}");
        assert!(post.max_r_hat() < 1.05);
        for summary in &post.diagnostics {
            assert!(summary.acceptance > 0.2 && summary.acceptance < 0.7, "{summary:?}");
        }
    }
}
