//! Bayesian IPD network meta-regression on the centered logit baseline risk.
//!
//! For patient `i` of study `j` on arm `t` with baseline arm `h`:
//!
//! ```text
//! logit p = u_j + d_jht + (g0_j + g_jht) · c_ij,     c_ij = logit R_ij − mean_j(logit R)
//! ```
//!
//! with `d_jht = 0`, `g_jht = 0` on the baseline arm. Contrasts are either common,
//! `d_jht = δ_t − δ_h`, or random around that mean. `δ` and `γ` are zero for the reference
//! treatment and never sampled, so every contrast is a difference of basic parameters.

mod diagnostics;
mod model;
mod sampler;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub use diagnostics::{effective_sample_size, split_r_hat, ParameterSummary};
pub use model::{build_likelihood, NmrModel, ParameterRole};
pub use sampler::sample;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NmrError {
    #[error("invalid specification: {0}")]
    Spec(String),
    #[error("no studies")]
    Empty,
    #[error("study {study}: {arms} arm(s), need at least 2")]
    TooFewArms { study: String, arms: usize },
    #[error("study {study}: baseline treatment {treatment} has no patients")]
    EmptyBaseline { study: String, treatment: String },
    #[error("study {study}: treatment {treatment} is not registered")]
    UnknownTreatment { study: String, treatment: String },
    #[error("reference treatment {0} does not appear in any study")]
    MissingReference(String),
    #[error("treatment network is disconnected: {0:?}")]
    Disconnected(Vec<Vec<String>>),
    #[error("non-finite logit risk in study {study}")]
    NonFiniteRisk { study: String },
    #[error("log-posterior is not finite at the initial values")]
    NonFiniteStart,
    #[error("chain {chain} is stuck on {parameter}: acceptance {acceptance:.4} after burn-in")]
    StuckChain { parameter: String, chain: usize, acceptance: f64 },
    #[error("diagnostics need at least 4 draws per split chain, got {0}")]
    TooFewDraws(usize),
    #[error("diagnostics need at least 2 chains, got {0}")]
    TooFewChains(usize),
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
}

pub type Result<T, E = NmrError> = std::result::Result<T, E>;

/// Structure of the treatment contrasts `d_jht`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentEffects {
    #[default]
    Common,
    Random,
}

/// Structure of the effect-modification contrasts `g_jht`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModifierEffects {
    #[default]
    Common,
    Random,
    /// `γ_t` fixed at 0.
    Omitted,
}

/// Structure of the prognostic slope `g0_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RiskSlope {
    #[default]
    Common,
    Exchangeable,
    Independent,
    /// `g0_j` fixed at 0.
    Omitted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McmcSettings {
    pub chains: usize,
    /// Iterations per chain, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for McmcSettings {
    fn default() -> Self {
        Self { chains: 2, iterations: 10_000, burn_in: 1_000, thin: 10 }
    }
}

impl McmcSettings {
    /// Draws kept per chain: iterations `burn_in + thin`, `burn_in + 2·thin`, ...
    pub fn retained_per_chain(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    pub fn retained(&self) -> usize {
        self.chains * self.retained_per_chain()
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains < 2 {
            return Err(NmrError::Spec(format!("need at least 2 chains, got {}", self.chains)));
        }
        if self.thin == 0 {
            return Err(NmrError::Spec("thin must be at least 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(NmrError::Spec(format!(
                "burn-in {} must be below iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.retained_per_chain() == 0 {
            return Err(NmrError::Spec("settings retain no draws".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmrSpec<T> {
    pub treatment_effects: TreatmentEffects,
    pub modifier_effects: ModifierEffects,
    pub risk_slope: RiskSlope,
    /// Variance of the normal prior on location parameters.
    pub prior_variance: T,
    /// Scale of the half-normal prior on heterogeneity standard deviations.
    pub heterogeneity_scale: T,
    pub mcmc: McmcSettings,
    pub seed: u64,
}

impl<T: Scalar> Default for NmrSpec<T> {
    fn default() -> Self {
        Self {
            treatment_effects: TreatmentEffects::Common,
            modifier_effects: ModifierEffects::Common,
            risk_slope: RiskSlope::Common,
            prior_variance: T::lit(1000.0),
            heterogeneity_scale: T::one(),
            mcmc: McmcSettings::default(),
            seed: 1,
        }
    }
}

impl<T: Scalar> NmrSpec<T> {
    pub fn validate(&self) -> Result<()> {
        self.mcmc.validate()?;
        if !(self.prior_variance > T::zero()) || !self.prior_variance.is_finite() {
            return Err(NmrError::Spec(format!("prior variance must be positive, got {}", self.prior_variance)));
        }
        if !(self.heterogeneity_scale > T::zero()) || !self.heterogeneity_scale.is_finite() {
            return Err(NmrError::Spec(format!(
                "heterogeneity scale must be positive, got {}",
                self.heterogeneity_scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmrPatient<T> {
    pub treatment: String,
    pub outcome: bool,
    pub logit_risk: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmrStudy<T> {
    pub study_id: String,
    pub baseline: String,
    pub patients: Vec<NmrPatient<T>>,
}

/// Retained draws of every sampled parameter, chain-major and row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmrPosterior<T> {
    pub names: Vec<String>,
    pub chains: usize,
    pub draws_per_chain: usize,
    /// `draws[(chain · draws_per_chain + k) · names.len() + p]`.
    pub draws: Vec<T>,
    pub diagnostics: Vec<ParameterSummary>,
    pub spec: NmrSpec<T>,
    /// Treatments in the network, registry order.
    pub treatments: Vec<String>,
    pub reference: String,
    /// Per-study mean logit risk subtracted before fitting.
    pub centering: IndexMap<String, T>,
    pub stage1_fingerprint: Option<String>,
}

impl<T: Scalar> NmrPosterior<T> {
    pub fn n_draws(&self) -> usize {
        self.chains * self.draws_per_chain
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Result<Vec<T>> {
        let p = self.index_of(name).ok_or_else(|| NmrError::UnknownParameter(name.to_string()))?;
        Ok(self.column_at(p))
    }

    fn column_at(&self, p: usize) -> Vec<T> {
        let width = self.names.len();
        (0..self.n_draws()).map(|d| self.draws[d * width + p]).collect()
    }

    pub fn mean(&self, name: &str) -> Result<T> {
        let col = self.column(name)?;
        Ok(crate::scalar::shifted_mean(&col))
    }

    pub fn summary(&self, name: &str) -> Option<&ParameterSummary> {
        self.diagnostics.iter().find(|s| s.name == name)
    }

    fn optional_column(&self, name: &str) -> Vec<T> {
        match self.index_of(name) {
            Some(p) => self.column_at(p),
            None => vec![T::zero(); self.n_draws()],
        }
    }

    /// Per-draw `δ_t`; zero for the reference treatment.
    pub fn delta_draws(&self, treatment: &str) -> Result<Vec<T>> {
        self.check_treatment(treatment)?;
        Ok(self.optional_column(&model::delta_name(treatment)))
    }

    /// Per-draw `γ_t`; zero for the reference treatment or when modifiers are omitted.
    pub fn gamma_draws(&self, treatment: &str) -> Result<Vec<T>> {
        self.check_treatment(treatment)?;
        Ok(self.optional_column(&model::gamma_name(treatment)))
    }

    /// Per-draw prognostic slope for a new patient: `γ0` when sampled, otherwise the
    /// average of the study-specific slopes (zero when the slope is omitted).
    pub fn gamma0_draws(&self) -> Vec<T> {
        if let Some(p) = self.index_of(model::GAMMA0) {
            return self.column_at(p);
        }
        let cols: Vec<usize> = self
            .names
            .iter()
            .enumerate()
            .filter(|(_, n)| n.starts_with("g0["))
            .map(|(p, _)| p)
            .collect();
        if cols.is_empty() {
            return vec![T::zero(); self.n_draws()];
        }
        let width = self.names.len();
        let k = T::from_count(cols.len());
        (0..self.n_draws())
            .map(|d| cols.iter().map(|&p| self.draws[d * width + p]).sum::<T>() / k)
            .collect()
    }

    fn check_treatment(&self, treatment: &str) -> Result<()> {
        if self.treatments.iter().any(|t| t == treatment) {
            Ok(())
        } else {
            Err(NmrError::UnknownParameter(format!("treatment {treatment}")))
        }
    }

    pub fn max_r_hat(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.r_hat).fold(0.0, f64::max)
    }
}
