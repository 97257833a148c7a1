//! Stage-one baseline risk model: logistic regression fitted by maximum likelihood,
//! LASSO with cross-validated penalty, or ridge-penalized likelihood with the penalty
//! picked by a modified AIC.

mod cv;
mod irls;
mod lasso;

use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scalar::{expit, logit, Scalar};
use crate::validation::ValidationReport;

pub use cv::{cv_select_lambda, fit_lasso_cv, stratified_folds, CvPoint, CvRule, CvSelection, LassoCvOptions};
pub use irls::{
    fit_mle, fit_penalized, fit_penalized_mle, irls, IrlsFit, IrlsOptions, PenaltyPoint, DEFAULT_PENALTY_GRID,
};
pub use lasso::{fit_lasso, fit_lasso_with, kkt_violation, lambda_grid, lambda_max, LassoOptions, LassoPath, LassoPoint};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("outcome has a single class")]
    SingleClass,
    #[error("need more observations ({n}) than parameters ({p})")]
    TooFewObservations { n: usize, p: usize },
    #[error("complete or quasi-complete separation: standardized coefficient of '{column}' diverged")]
    Separation { column: String },
    #[error("information matrix is singular")]
    Singular,
    #[error("did not converge in {0} iterations")]
    NonConvergence(usize),
    #[error("non-finite value in column '{0}'")]
    NonFinite(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("every cross-validation fold assignment left a single-class fold after {0} attempts")]
    DegenerateFolds(usize),
    #[error("missing covariate '{0}'")]
    MissingCovariate(String),
}

pub type Result<T, E = FitError> = std::result::Result<T, E>;

/// Numeric design with binary outcome and per-column standardization constants.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix<T> {
    names: Vec<String>,
    columns: Vec<Vec<T>>,
    standardized: Vec<Vec<T>>,
    means: Vec<T>,
    sds: Vec<T>,
    y: Vec<T>,
}

impl<T: Scalar> DesignMatrix<T> {
    /// Column-major constructor. Columns with zero spread are kept but never receive a
    /// coefficient.
    pub fn from_columns(names: Vec<String>, columns: Vec<Vec<T>>, outcomes: &[bool]) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(FitError::Dimension(format!("{} names for {} columns", names.len(), columns.len())));
        }
        let n = outcomes.len();
        for (name, col) in names.iter().zip(&columns) {
            if col.len() != n {
                return Err(FitError::Dimension(format!("column '{name}' has {} rows, expected {n}", col.len())));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(FitError::NonFinite(name.clone()));
            }
        }
        let nt = T::from_count(n.max(1));
        let mut means = Vec::with_capacity(columns.len());
        let mut sds = Vec::with_capacity(columns.len());
        let mut standardized = Vec::with_capacity(columns.len());
        for col in &columns {
            let mean = col.iter().copied().sum::<T>() / nt;
            let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nt;
            let sd = var.sqrt();
            // Spread below rounding noise of the mean counts as constant.
            let sd = if sd <= mean.abs() * T::epsilon() * T::lit(64.0) { T::zero() } else { sd };
            standardized.push(if sd > T::zero() {
                col.iter().map(|&v| (v - mean) / sd).collect()
            } else {
                vec![T::zero(); n]
            });
            means.push(mean);
            sds.push(sd);
        }
        let y = outcomes.iter().map(|&b| if b { T::one() } else { T::zero() }).collect();
        Ok(Self { names, columns, standardized, means, sds, y })
    }

    /// Row-major constructor.
    pub fn from_rows(names: Vec<String>, rows: &[Vec<T>], outcomes: &[bool]) -> Result<Self> {
        let p = names.len();
        if let Some(bad) = rows.iter().position(|r| r.len() != p) {
            return Err(FitError::Dimension(format!("row {bad} has {} values, expected {p}", rows[bad].len())));
        }
        let columns = (0..p).map(|k| rows.iter().map(|r| r[k]).collect()).collect();
        Self::from_columns(names, columns, outcomes)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, k: usize) -> &[T] {
        &self.columns[k]
    }

    pub fn standardized(&self, k: usize) -> &[T] {
        &self.standardized[k]
    }

    pub fn means(&self) -> &[T] {
        &self.means
    }

    pub fn sds(&self) -> &[T] {
        &self.sds
    }

    pub fn y(&self) -> &[T] {
        &self.y
    }

    pub fn outcomes(&self) -> Vec<bool> {
        self.y.iter().map(|&v| v > T::lit(0.5)).collect()
    }

    pub fn events(&self) -> usize {
        self.y.iter().filter(|&&v| v > T::lit(0.5)).count()
    }

    pub fn is_active(&self, k: usize) -> bool {
        self.sds[k] > T::zero()
    }

    pub fn row(&self, i: usize) -> Vec<T> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// Rows at `indices` (repeats allowed), re-standardized.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let columns = self.columns.iter().map(|c| indices.iter().map(|&i| c[i]).collect()).collect();
        let outcomes: Vec<bool> = indices.iter().map(|&i| self.y[i] > T::lit(0.5)).collect();
        Self::from_columns(self.names.clone(), columns, &outcomes).expect("subset of a valid design")
    }

    pub(crate) fn check_both_classes(&self) -> Result<()> {
        let events = self.events();
        if events == 0 || events == self.n() {
            Err(FitError::SingleClass)
        } else {
            Ok(())
        }
    }

    pub fn null_log_likelihood(&self) -> T {
        let n = T::from_count(self.n());
        let ybar = T::from_count(self.events()) / n;
        if ybar <= T::zero() || ybar >= T::one() {
            return T::zero();
        }
        n * (ybar * ybar.ln() + (T::one() - ybar) * (T::one() - ybar).ln())
    }

    /// Maps standardized-scale coefficients back to the original columns.
    pub(crate) fn unstandardize(&self, intercept_std: T, beta_std: &[T]) -> (T, Vec<T>) {
        let mut intercept = intercept_std;
        let beta = beta_std
            .iter()
            .enumerate()
            .map(|(k, &b)| {
                if self.sds[k] > T::zero() {
                    intercept = intercept - b * self.means[k] / self.sds[k];
                    b / self.sds[k]
                } else {
                    T::zero()
                }
            })
            .collect();
        (intercept, beta)
    }

    /// Linear predictor on the standardized scale.
    pub(crate) fn eta_std(&self, intercept_std: T, beta_std: &[T]) -> Vec<T> {
        let mut eta = vec![intercept_std; self.n()];
        for (k, &b) in beta_std.iter().enumerate() {
            if b != T::zero() {
                for (e, &x) in eta.iter_mut().zip(&self.standardized[k]) {
                    *e = *e + b * x;
                }
            }
        }
        eta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Mle,
    Lasso,
    PenalizedMle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale<T> {
    pub name: String,
    pub mean: T,
    pub sd: T,
}

/// Fitted baseline-risk model with coefficients on the original covariate scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskModel<T> {
    pub method: FitMethod,
    pub intercept: T,
    pub coefficients: IndexMap<String, T>,
    pub standardization: Vec<ColumnScale<T>>,
    pub lambda: Option<T>,
    pub cv_curve: Option<Vec<CvPoint<T>>>,
    pub penalty_trace: Option<Vec<PenaltyPoint<T>>>,
    pub effective_df: Option<T>,
    pub standard_errors: Option<IndexMap<String, T>>,
    pub log_likelihood: T,
    pub null_log_likelihood: T,
    pub n: usize,
    pub events: usize,
    pub validation: Option<ValidationReport<T>>,
    pub schema_fingerprint: Option<String>,
}

impl<T: Scalar> RiskModel<T> {
    pub(crate) fn assemble(
        method: FitMethod,
        design: &DesignMatrix<T>,
        intercept_std: T,
        beta_std: &[T],
    ) -> Self {
        let (intercept, beta) = design.unstandardize(intercept_std, beta_std);
        let eta = design.eta_std(intercept_std, beta_std);
        let log_likelihood = log_likelihood(design.y(), &eta);
        Self {
            method,
            intercept,
            coefficients: design.names().iter().cloned().zip(beta).collect(),
            standardization: design
                .names()
                .iter()
                .zip(design.means().iter().zip(design.sds()))
                .map(|(name, (&mean, &sd))| ColumnScale { name: name.clone(), mean, sd })
                .collect(),
            lambda: None,
            cv_curve: None,
            penalty_trace: None,
            effective_df: None,
            standard_errors: None,
            log_likelihood,
            null_log_likelihood: design.null_log_likelihood(),
            n: design.n(),
            events: design.events(),
            validation: None,
            schema_fingerprint: None,
        }
    }

    /// Model with known coefficients and no training record, e.g. a published or true model.
    pub fn from_coefficients(method: FitMethod, intercept: T, coefficients: IndexMap<String, T>) -> Self {
        Self {
            method,
            intercept,
            standardization: Vec::new(),
            coefficients,
            lambda: None,
            cv_curve: None,
            penalty_trace: None,
            effective_df: None,
            standard_errors: None,
            log_likelihood: T::nan(),
            null_log_likelihood: T::nan(),
            n: 0,
            events: 0,
            validation: None,
            schema_fingerprint: None,
        }
    }

    /// Linear predictor for a row in coefficient order.
    pub fn linear_predictor_row(&self, row: &[T]) -> T {
        self.coefficients.values().zip(row).fold(self.intercept, |acc, (&b, &x)| acc + b * x)
    }

    /// Linear predictor for every row of a design with the same columns.
    pub fn linear_predictor(&self, design: &DesignMatrix<T>) -> Vec<T> {
        let mut eta = vec![self.intercept; design.n()];
        for (k, &b) in self.coefficients.values().enumerate() {
            if b != T::zero() {
                for (e, &x) in eta.iter_mut().zip(design.column(k)) {
                    *e = *e + b * x;
                }
            }
        }
        eta
    }

    pub fn score_row(&self, row: &[T]) -> RiskScore<T> {
        RiskScore::from_logit(self.linear_predictor_row(row))
    }

    /// Scores a patient given by expanded covariate name.
    pub fn score(&self, patient: &BTreeMap<String, T>) -> Result<RiskScore<T>> {
        let mut eta = self.intercept;
        for (name, &b) in &self.coefficients {
            let x = patient.get(name).ok_or_else(|| FitError::MissingCovariate(name.clone()))?;
            eta = eta + b * *x;
        }
        Ok(RiskScore::from_logit(eta))
    }

    /// Names of covariates with a non-zero coefficient.
    pub fn support(&self) -> Vec<&str> {
        self.coefficients.iter().filter(|(_, &b)| b != T::zero()).map(|(n, _)| n.as_str()).collect()
    }

    /// Hash of the intercept and coefficient block.
    pub fn fingerprint(&self) -> String {
        let block = serde_json::to_string(&(&self.intercept, &self.coefficients)).expect("serializable");
        hex::encode(Sha256::digest(block.as_bytes()))
    }
}

/// Baseline risk of one patient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskScore<T> {
    pub risk: T,
    pub logit_risk: T,
}

impl<T: Scalar> RiskScore<T> {
    pub fn from_logit(logit_risk: T) -> Self {
        Self { risk: expit(logit_risk), logit_risk }
    }

    pub fn from_risk(risk: T) -> Self {
        Self { risk, logit_risk: logit(risk) }
    }
}

pub fn log_likelihood<T: Scalar>(y: &[T], eta: &[T]) -> T {
    y.iter().zip(eta).map(|(&yi, &e)| yi * e - crate::scalar::softplus(e)).sum()
}
