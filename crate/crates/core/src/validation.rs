//! Discrimination (c-statistic), calibration slope and bootstrap optimism correction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::risk::{irls, DesignMatrix, FitError, IrlsOptions, RiskModel};
use crate::scalar::Scalar;
use crate::seeds::derive_seed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("labels contain a single class")]
    SingleClass,
    #[error("{scores} scores for {labels} labels")]
    Length { scores: usize, labels: usize },
    #[error("non-finite score")]
    NonFinite,
    #[error("linear predictor is constant")]
    ConstantPredictor,
    #[error("linear predictor separates the outcome")]
    Separation,
    #[error("fit failed: {0}")]
    Fit(#[from] FitError),
    #[error("resample {index}: fitting failed after {attempts} draws ({last})")]
    TooManyRedraws { index: usize, attempts: usize, last: FitError },
}

pub type Result<T, E = ValidationError> = std::result::Result<T, E>;

/// Probability that an event outranks a non-event, ties counted half, via midranks.
pub fn c_statistic<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<T> {
    if scores.len() != labels.len() {
        return Err(ValidationError::Length { scores: scores.len(), labels: labels.len() });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(ValidationError::NonFinite);
    }
    let n1 = labels.iter().filter(|&&y| y).count() as u64;
    let n0 = labels.len() as u64 - n1;
    if n1 == 0 || n0 == 0 {
        return Err(ValidationError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // Twice the rank sum of events, in integers: a tie block starting at 0-based position
    // `a` with length `len` gives each member midrank (2a + len + 1) / 2.
    let mut twice_rank_sum: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let len = (end - start) as u64;
        let events = order[start..end].iter().filter(|&&i| labels[i]).count() as u64;
        twice_rank_sum += events * (2 * start as u64 + len + 1);
        start = end;
    }
    let twice_u = twice_rank_sum - n1 * (n1 + 1);
    Ok(T::from_u64(twice_u).unwrap() / T::from_u64(2 * n1 * n0).unwrap())
}

/// Slope of the logistic recalibration `logit P(y) = a + b·LP`.
pub fn calibration_slope<T: Scalar>(linear_predictor: &[T], labels: &[bool]) -> Result<T> {
    if linear_predictor.len() != labels.len() {
        return Err(ValidationError::Length { scores: linear_predictor.len(), labels: labels.len() });
    }
    if linear_predictor.iter().any(|s| !s.is_finite()) {
        return Err(ValidationError::NonFinite);
    }
    let design = DesignMatrix::from_columns(vec!["lp".into()], vec![linear_predictor.to_vec()], labels)?;
    if !design.is_active(0) {
        return Err(ValidationError::ConstantPredictor);
    }
    match irls(&design, T::zero(), &IrlsOptions::default()) {
        Ok(fit) => Ok(fit.beta_std[0] / design.sds()[0]),
        Err(FitError::SingleClass) => Err(ValidationError::SingleClass),
        Err(FitError::Separation { .. }) => Err(ValidationError::Separation),
        Err(e) => Err(e.into()),
    }
}

/// A complete model-building pipeline, rerun inside every bootstrap resample.
pub trait FitProcedure<T>: Sync {
    fn fit(&self, design: &DesignMatrix<T>, seed: u64) -> Result<RiskModel<T>, FitError>;
}

impl<T, F> FitProcedure<T> for F
where
    F: Fn(&DesignMatrix<T>, u64) -> Result<RiskModel<T>, FitError> + Sync,
{
    fn fit(&self, design: &DesignMatrix<T>, seed: u64) -> Result<RiskModel<T>, FitError> {
        self(design, seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapOptions {
    pub resamples: usize,
    pub seed: u64,
    /// Resample within these groups (e.g. study index per row) instead of across all rows.
    pub strata: Option<Vec<usize>>,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self { resamples: 500, seed: 1, strata: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport<T> {
    pub c_apparent: T,
    /// `None` when the apparent linear predictor is constant.
    pub slope_apparent: Option<T>,
    pub optimism_c: T,
    /// Mean over resamples where both slopes exist; `None` if there were none.
    pub optimism_slope: Option<T>,
    pub c_corrected: T,
    pub slope_corrected: Option<T>,
    pub resamples: usize,
    pub slope_resamples: usize,
    pub redraws: usize,
    pub seed: u64,
}

impl<T: Scalar> ValidationReport<T> {
    pub fn table(&self) -> String {
        let opt = |v: Option<T>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        format!(
            "{:<18}{:>10}{:>10}{:>10}\n{:<18}{:>10.4}{:>10.4}{:>10.4}\n{:<18}{:>10}{:>10}{:>10}\n\
             bootstrap resamples: {} (slope usable in {}), redraws: {}, seed: {}\n",
            "",
            "apparent",
            "optimism",
            "corrected",
            "c-statistic",
            self.c_apparent,
            self.optimism_c,
            self.c_corrected,
            "calibration slope",
            opt(self.slope_apparent),
            opt(self.optimism_slope),
            opt(self.slope_corrected),
            self.resamples,
            self.slope_resamples,
            self.redraws,
            self.seed
        )
    }
}

struct Performance<T> {
    c: T,
    slope: Option<T>,
}

fn performance<T: Scalar>(model: &RiskModel<T>, design: &DesignMatrix<T>) -> Result<Performance<T>> {
    let lp = model.linear_predictor(design);
    let labels = design.outcomes();
    let c = c_statistic(&lp, &labels)?;
    let slope = match calibration_slope(&lp, &labels) {
        Ok(s) => Some(s),
        Err(ValidationError::ConstantPredictor | ValidationError::Separation) => None,
        Err(ValidationError::Fit(FitError::NonConvergence(_) | FitError::Singular)) => None,
        Err(e) => return Err(e),
    };
    Ok(Performance { c, slope })
}

fn draw_indices(rng: &mut ChaCha8Rng, n: usize, strata: Option<&[usize]>) -> Vec<usize> {
    match strata {
        None => (0..n).map(|_| rng.random_range(0..n)).collect(),
        Some(groups) => {
            let mut members: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
            for (i, &g) in groups.iter().enumerate() {
                members.entry(g).or_default().push(i);
            }
            let mut out = Vec::with_capacity(n);
            for rows in members.values() {
                for _ in 0..rows.len() {
                    out.push(rows[rng.random_range(0..rows.len())]);
                }
            }
            out
        }
    }
}

const MAX_REDRAWS: usize = 3;

/// Bootstrap optimism correction: each resample reruns `procedure` from scratch and its
/// optimism is the performance on the resample minus the performance on the original rows.
pub fn bootstrap_validate<T: Scalar, P: FitProcedure<T>>(
    design: &DesignMatrix<T>,
    procedure: &P,
    opts: &BootstrapOptions,
) -> Result<ValidationReport<T>> {
    if let Some(strata) = &opts.strata {
        if strata.len() != design.n() {
            return Err(ValidationError::Length { scores: strata.len(), labels: design.n() });
        }
    }
    let apparent_model = procedure.fit(design, opts.seed)?;
    let apparent = performance(&apparent_model, design)?;

    let per_resample: Vec<Result<(T, Option<T>, usize)>> = (0..opts.resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, b as u64 + 1));
            let mut last = FitError::SingleClass;
            for attempt in 0..=MAX_REDRAWS {
                let idx = draw_indices(&mut rng, design.n(), opts.strata.as_deref());
                let fit_seed: u64 = rng.random();
                let sample = design.subset(&idx);
                match procedure.fit(&sample, fit_seed) {
                    Ok(model) => {
                        let on_sample = performance(&model, &sample)?;
                        let on_original = performance(&model, design)?;
                        let slope = on_sample.slope.zip(on_original.slope).map(|(a, b)| a - b);
                        return Ok((on_sample.c - on_original.c, slope, attempt));
                    }
                    Err(e) => last = e,
                }
            }
            Err(ValidationError::TooManyRedraws { index: b, attempts: MAX_REDRAWS + 1, last })
        })
        .collect();

    let mut sum_c = T::zero();
    let mut sum_slope = T::zero();
    let mut slope_resamples = 0;
    let mut redraws = 0;
    for r in per_resample {
        let (c, slope, extra) = r?;
        sum_c = sum_c + c;
        if let Some(s) = slope {
            sum_slope = sum_slope + s;
            slope_resamples += 1;
        }
        redraws += extra;
    }
    let optimism_c = if opts.resamples == 0 { T::zero() } else { sum_c / T::from_count(opts.resamples) };
    let optimism_slope = if opts.resamples == 0 {
        Some(T::zero())
    } else if slope_resamples == 0 {
        None
    } else {
        Some(sum_slope / T::from_count(slope_resamples))
    };
    let slope_corrected = match (apparent.slope, optimism_slope) {
        (Some(a), Some(o)) => Some(a - o),
        _ => None,
    };
    Ok(ValidationReport {
        c_apparent: apparent.c,
        slope_apparent: apparent.slope,
        optimism_c,
        optimism_slope,
        c_corrected: apparent.c - optimism_c,
        slope_corrected,
        resamples: opts.resamples,
        slope_resamples,
        redraws,
        seed: opts.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairwise(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut twice, mut pairs) = (0u64, 0u64);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
                    pairs += 1;
                    if scores[i] > scores[j] {
                        twice += 2;
                    } else if scores[i] == scores[j] {
                        twice += 1;
                    }
                }
            }
        }
        twice as f64 / (2 * pairs) as f64
    }

    #[test]
    fn c_statistic_definition_cases() {
        let labels = [false, false, true, true];
        assert_eq!(c_statistic(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap(), 1.0);
        assert_eq!(c_statistic(&[0.5f32; 4], &labels).unwrap(), 0.5);
        assert_eq!(c_statistic(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap(), 0.0);
        assert_eq!(c_statistic(&[1.0, 2.0], &[true, true]).unwrap_err(), ValidationError::SingleClass);
    }

    #[test]
    fn c_statistic_matches_pairwise_with_ties() {
        let scores: Vec<f64> = (0..97).map(|i| ((i * 31) % 11) as f64).collect();
        let labels: Vec<bool> = (0..97).map(|i| (i * 17) % 5 < 2).collect();
        assert_eq!(c_statistic(&scores, &labels).unwrap(), pairwise(&scores, &labels));
    }

    #[test]
    fn calibration_slope_affine() {
        let lp: Vec<f64> = (0..300).map(|i| ((i * 37) % 101) as f64 / 25.0 - 2.0).collect();
        let labels: Vec<bool> = (0..300).map(|i| ((i * 53) % 97) as f64 / 97.0 < 1.0 / (1.0 + (-lp[i]).exp())).collect();
        let s = calibration_slope(&lp, &labels).unwrap();
        let half: Vec<f64> = lp.iter().map(|x| x / 2.0).collect();
        let s_half = calibration_slope(&half, &labels).unwrap();
        assert!((s_half - 2.0 * s).abs() < 1e-8);
        assert_eq!(calibration_slope(&[1.0; 4], &[true, false, true, false]).unwrap_err(), ValidationError::ConstantPredictor);
    }
}
