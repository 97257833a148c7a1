//! Two-stage prediction of heterogeneous treatment effects from individual patient data.
//!
//! Stage one fits a baseline-risk logistic model (maximum likelihood, LASSO or ridge-
//! penalized likelihood) and validates it with bootstrap optimism correction. Stage two
//! uses the logit of that risk as prognostic factor and effect modifier in a Bayesian
//! network meta-regression, sampled by adaptive random-walk Metropolis. Predictions
//! combine the posterior with an anchor estimated from untreated patients.
//!
//! The numerical modules are generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the `f64` instantiation used by the pipeline and the artifacts.

pub mod artifact;
pub mod dataset;
pub mod design;
pub mod linalg;
pub mod nmr;
pub mod pipeline;
pub mod prediction;
pub mod risk;
pub mod scalar;
pub mod seeds;
pub mod synth;
pub mod validation;

pub use scalar::Scalar;

pub type DesignMatrix = risk::DesignMatrix<f64>;
pub type NmrPosterior = nmr::NmrPosterior<f64>;
pub type NmrSpec = nmr::NmrSpec<f64>;
pub type PredictionAnchor = prediction::PredictionAnchor<f64>;
pub type PredictionResult = prediction::PredictionResult<f64>;
pub type RiskModel = risk::RiskModel<f64>;
pub type RiskScore = risk::RiskScore<f64>;
pub type SampleSizeReport = design::SampleSizeReport<f64>;
pub type ValidationReport = validation::ValidationReport<f64>;
