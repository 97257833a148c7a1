use serde::{Deserialize, Serialize};

use super::{NmrError, Result};
use crate::scalar::{quantile_sorted, sort_scalars, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    pub r_hat: f64,
    pub ess: f64,
    /// Post burn-in acceptance rate averaged over chains.
    pub acceptance: f64,
}

impl ParameterSummary {
    /// Monte-Carlo standard error of the posterior mean.
    pub fn mcse(&self) -> f64 {
        if self.ess > 0.0 {
            self.sd / self.ess.sqrt()
        } else {
            f64::INFINITY
        }
    }
}

/// Each chain cut into two halves (middle draw dropped for odd lengths).
fn split<'a>(chains: &[&'a [f64]]) -> Result<Vec<&'a [f64]>> {
    if chains.len() < 2 {
        return Err(NmrError::TooFewChains(chains.len()));
    }
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    let half = n / 2;
    if half < 4 {
        return Err(NmrError::TooFewDraws(half));
    }
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        out.push(&c[..half]);
        out.push(&c[c.len() - half..]);
    }
    Ok(out)
}

/// Mean relative to the first draw, exact for constant input.
fn mean(xs: &[f64]) -> f64 {
    let first = xs[0];
    first + xs.iter().map(|x| x - first).sum::<f64>() / xs.len() as f64
}

fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Within-chain variance W, and the pooled estimate var⁺ of the marginal variance.
fn variance_components(parts: &[&[f64]]) -> (f64, f64) {
    let n = parts[0].len() as f64;
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let w = parts.iter().map(|p| variance(p)).sum::<f64>() / parts.len() as f64;
    let b = n * variance(&means);
    (w, (n - 1.0) / n * w + b / n)
}

/// Split-chain potential scale reduction. Zero within- and between-chain variance gives 1.
pub fn split_r_hat(chains: &[&[f64]]) -> Result<f64> {
    let parts = split(chains)?;
    let (w, var_plus) = variance_components(&parts);
    if w <= 0.0 {
        return Ok(if var_plus <= 0.0 { 1.0 } else { f64::INFINITY });
    }
    Ok((var_plus / w).sqrt())
}

/// Effective sample size from the split chains' autocorrelations, summed over Geyer's
/// initial monotone positive sequence.
pub fn effective_sample_size(chains: &[&[f64]]) -> Result<f64> {
    let parts = split(chains)?;
    let m = parts.len();
    let n = parts[0].len();
    let total = (m * n) as f64;
    let (w, var_plus) = variance_components(&parts);
    if w <= 0.0 || var_plus <= 0.0 {
        return Ok(total);
    }
    let centered: Vec<Vec<f64>> = parts
        .iter()
        .map(|p| {
            let mu = mean(p);
            p.iter().map(|x| x - mu).collect()
        })
        .collect();
    let autocov = |lag: usize| -> f64 {
        centered
            .iter()
            .map(|c| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
            .sum::<f64>()
            / m as f64
    };
    let rho = |lag: usize| 1.0 - (w - autocov(lag)) / var_plus;

    let mut sum = 0.0;
    let mut previous = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = if lag == 0 { 1.0 + rho(1) } else { rho(lag) + rho(lag + 1) };
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(previous);
        sum += pair;
        previous = pair;
        lag += 2;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / total.log10().max(1.0));
    Ok(total / tau)
}

/// Summaries of every parameter from chain-major, row-major draws.
pub(crate) fn summarize<T: Scalar>(
    names: &[String],
    chains: usize,
    per_chain: usize,
    draws: &[T],
    acceptance: &[f64],
) -> Result<Vec<ParameterSummary>> {
    let width = names.len();
    names
        .iter()
        .enumerate()
        .map(|(p, name)| {
            let per: Vec<Vec<f64>> = (0..chains)
                .map(|c| (0..per_chain).map(|k| draws[(c * per_chain + k) * width + p].as_f64()).collect())
                .collect();
            let refs: Vec<&[f64]> = per.iter().map(|v| v.as_slice()).collect();
            let mut all: Vec<f64> = per.concat();
            let mean = mean(&all);
            let sd = if all.len() > 1 {
                (all.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (all.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            sort_scalars(&mut all);
            Ok(ParameterSummary {
                name: name.clone(),
                mean,
                sd,
                q025: quantile_sorted(&all, 0.025),
                q975: quantile_sorted(&all, 0.975),
                r_hat: split_r_hat(&refs)?,
                ess: effective_sample_size(&refs)?,
                acceptance: acceptance[p],
            })
        })
        .collect()
}
