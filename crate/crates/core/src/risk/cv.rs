use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lasso::{fit_lasso, fit_lasso_with, lambda_grid, lambda_max, LassoOptions};
use super::{DesignMatrix, FitError, Result, RiskModel};
use crate::scalar::Scalar;
use crate::seeds::derive_seed;
use crate::validation::c_statistic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvRule {
    /// Largest penalty whose mean AUC is within one standard error of the best.
    #[default]
    OneSe,
    /// Penalty with the best mean AUC.
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvPoint<T> {
    pub lambda: T,
    pub mean_auc: T,
    pub se_auc: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvSelection<T> {
    pub lambda: T,
    pub index: usize,
    pub curve: Vec<CvPoint<T>>,
    /// Fold assignment attempts used (1 unless a fold came out single-class).
    pub attempts: usize,
}

const MAX_FOLD_ATTEMPTS: usize = 10;

/// Fold index per row, stratified by outcome.
pub fn stratified_folds(outcomes: &[bool], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events: Vec<usize> = (0..outcomes.len()).filter(|&i| outcomes[i]).collect();
    let mut non_events: Vec<usize> = (0..outcomes.len()).filter(|&i| !outcomes[i]).collect();
    events.shuffle(&mut rng);
    non_events.shuffle(&mut rng);
    let mut assignment = vec![0; outcomes.len()];
    for (slot, &i) in events.iter().chain(non_events.iter()).enumerate() {
        assignment[i] = slot % folds;
    }
    assignment
}

/// Cross-validated choice of the LASSO penalty by out-of-fold AUC.
/// Fold fits only feed a rank statistic, so they stop at a looser optimality tolerance.
fn fold_options<T: Scalar>() -> LassoOptions<T> {
    LassoOptions { kkt_tol: T::lit(1e-5).max(LassoOptions::<T>::default().kkt_tol), ..Default::default() }
}

pub fn cv_select_lambda<T: Scalar>(
    design: &DesignMatrix<T>,
    lambdas: &[T],
    folds: usize,
    rule: CvRule,
    seed: u64,
) -> Result<CvSelection<T>> {
    if folds < 2 {
        return Err(FitError::Argument(format!("need at least 2 folds, got {folds}")));
    }
    if lambdas.is_empty() {
        return Err(FitError::Argument("empty penalty grid".into()));
    }
    design.check_both_classes()?;
    let outcomes = design.outcomes();

    for attempt in 0..MAX_FOLD_ATTEMPTS {
        let assignment = stratified_folds(&outcomes, folds, derive_seed(seed, attempt as u64));
        let degenerate = (0..folds).any(|f| {
            let test: Vec<bool> = (0..outcomes.len()).filter(|&i| assignment[i] == f).map(|i| outcomes[i]).collect();
            test.iter().all(|&y| y) || test.iter().all(|&y| !y)
        });
        if degenerate {
            continue;
        }
        let per_fold: Vec<Result<Vec<T>>> = (0..folds)
            .into_par_iter()
            .map(|f| {
                let train: Vec<usize> = (0..outcomes.len()).filter(|&i| assignment[i] != f).collect();
                let test: Vec<usize> = (0..outcomes.len()).filter(|&i| assignment[i] == f).collect();
                let train_design = design.subset(&train);
                let test_design = design.subset(&test);
                let test_labels = test_design.outcomes();
                let path = fit_lasso_with(&train_design, lambdas, &fold_options::<T>())?;
                path.coefficients(&train_design)
                    .into_iter()
                    .map(|(b0, beta)| {
                        let scores: Vec<T> = (0..test.len())
                            .map(|i| {
                                (0..beta.len())
                                    .fold(b0, |acc, k| acc + beta[k] * test_design.column(k)[i])
                            })
                            .collect();
                        c_statistic(&scores, &test_labels).map_err(|e| FitError::Argument(e.to_string()))
                    })
                    .collect()
            })
            .collect();
        let mut aucs = Vec::with_capacity(folds);
        let mut resample = false;
        for r in per_fold {
            match r {
                Ok(v) => aucs.push(v),
                Err(FitError::SingleClass) => {
                    resample = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if resample {
            continue;
        }

        let k = T::from_count(folds);
        let curve: Vec<CvPoint<T>> = lambdas
            .iter()
            .enumerate()
            .map(|(j, &lambda)| {
                let vals: Vec<T> = aucs.iter().map(|a| a[j]).collect();
                let mean = vals.iter().copied().sum::<T>() / k;
                let var = vals.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / (k - T::one());
                CvPoint { lambda, mean_auc: mean, se_auc: (var / k).sqrt() }
            })
            .collect();
        let best = curve
            .iter()
            .enumerate()
            .fold(0, |b, (j, p)| if p.mean_auc > curve[b].mean_auc { j } else { b });
        let index = match rule {
            CvRule::Max => best,
            CvRule::OneSe => {
                let threshold = curve[best].mean_auc - curve[best].se_auc;
                curve
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| p.mean_auc >= threshold)
                    .fold(best, |b, (j, p)| if p.lambda > curve[b].lambda { j } else { b })
            }
        };
        return Ok(CvSelection { lambda: curve[index].lambda, index, curve, attempts: attempt + 1 });
    }
    Err(FitError::DegenerateFolds(MAX_FOLD_ATTEMPTS))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoCvOptions {
    pub folds: usize,
    pub rule: CvRule,
    pub n_lambda: usize,
    pub lambda_ratio: f64,
    pub seed: u64,
}

impl Default for LassoCvOptions {
    fn default() -> Self {
        Self { folds: 10, rule: CvRule::OneSe, n_lambda: 100, lambda_ratio: 1e-4, seed: 1 }
    }
}

/// Full LASSO pipeline: grid from the data, penalty by cross-validation, refit on all rows.
pub fn fit_lasso_cv<T: Scalar>(design: &DesignMatrix<T>, opts: &LassoCvOptions) -> Result<RiskModel<T>> {
    design.check_both_classes()?;
    let lmax = lambda_max(design);
    // An all-constant design has λ_max = 0; any positive grid then gives the null model.
    let lmax = if lmax > T::zero() { lmax } else { T::one() };
    let grid = lambda_grid(lmax, opts.n_lambda, T::lit(opts.lambda_ratio));
    let selection = cv_select_lambda(design, &grid, opts.folds, opts.rule, opts.seed)?;
    let path = fit_lasso(design, &grid[..=selection.index])?;
    let mut model = path.model(design, selection.index);
    model.cv_curve = Some(selection.curve);
    Ok(model)
}
