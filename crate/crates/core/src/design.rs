//! Sample-size adequacy for developing a logistic prognostic model: events per variable
//! and the three minimum-sample-size criteria (shrinkage, optimism in R², precise intercept).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SampleSizeError {
    #[error("prevalence must lie strictly between 0 and 1, got {0}")]
    Prevalence(f64),
    #[error("Nagelkerke R² must lie in [0, 1], got {0}")]
    Nagelkerke(f64),
    #[error("need 0 < Cox-Snell R² ({r2}) < shrinkage ({shrinkage}) < 1")]
    Shrinkage { r2: f64, shrinkage: f64 },
    #[error("margin must be positive, got {0}")]
    Margin(f64),
    #[error("parameter count must be at least 1")]
    NoParameters,
}

/// Largest attainable Cox-Snell R² for an outcome with prevalence `phi`.
pub fn max_cox_snell<T: Scalar>(phi: T) -> Result<T, SampleSizeError> {
    if !(phi > T::zero() && phi < T::one()) {
        return Err(SampleSizeError::Prevalence(phi.as_f64()));
    }
    let one = T::one();
    let ln_null = phi * phi.ln() + (one - phi) * (one - phi).ln();
    Ok(one - (T::lit(2.0) * ln_null).exp())
}

pub fn nagelkerke_to_cox_snell<T: Scalar>(r2_nagelkerke: T, phi: T) -> Result<T, SampleSizeError> {
    if !(r2_nagelkerke >= T::zero() && r2_nagelkerke <= T::one()) {
        return Err(SampleSizeError::Nagelkerke(r2_nagelkerke.as_f64()));
    }
    Ok(r2_nagelkerke * max_cox_snell(phi)?)
}

pub fn epv<T: Scalar>(events: u64, df: u64) -> Result<T, SampleSizeError> {
    if df == 0 {
        return Err(SampleSizeError::NoParameters);
    }
    Ok(T::from_u64(events).unwrap() / T::from_u64(df).unwrap())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeReport<T> {
    pub n_available: Option<u64>,
    pub events: Option<u64>,
    pub df: u64,
    pub prevalence: T,
    pub epv: Option<T>,
    pub r2_nagelkerke: Option<T>,
    pub r2_cox_snell_adj: T,
    pub shrinkage_target: T,
    pub delta: T,
    pub n_criterion_1: T,
    pub n_criterion_2: T,
    pub n_criterion_3: T,
    /// `None` when a criterion diverges.
    pub n_min: Option<u64>,
    pub adequate: Option<bool>,
}

impl<T: Scalar> SampleSizeReport<T> {
    /// Attaches the available data, filling EPV and the adequacy verdict.
    pub fn with_available(mut self, n_available: u64, events: u64) -> Self {
        self.n_available = Some(n_available);
        self.events = Some(events);
        self.epv = epv(events, self.df).ok();
        self.adequate = Some(self.n_min.is_some_and(|n| n_available >= n));
        self
    }

    pub fn with_nagelkerke(mut self, r2: T) -> Self {
        self.r2_nagelkerke = Some(r2);
        self
    }

    pub fn table(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        let rows = [
            ("candidate parameters (df)", self.df.to_string()),
            ("outcome prevalence", format!("{:.4}", self.prevalence)),
            ("Nagelkerke R2", opt(self.r2_nagelkerke.map(|v| format!("{v:.4}")))),
            ("Cox-Snell adjusted R2", format!("{:.4}", self.r2_cox_snell_adj)),
            ("target shrinkage", format!("{:.3}", self.shrinkage_target)),
            ("criterion 1 (shrinkage)", format!("{:.1}", self.n_criterion_1)),
            ("criterion 2 (R2 optimism)", format!("{:.1}", self.n_criterion_2)),
            ("criterion 3 (intercept)", format!("{:.1}", self.n_criterion_3)),
            ("minimum sample size", self.n_min.map(|n| n.to_string()).unwrap_or_else(|| "diverges".into())),
            ("available", opt(self.n_available.map(|n| n.to_string()))),
            ("events", opt(self.events.map(|n| n.to_string()))),
            ("EPV", opt(self.epv.map(|v| format!("{v:.2}")))),
            ("adequate", opt(self.adequate.map(|a| if a { "yes".into() } else { "no".into() }))),
        ];
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        rows.iter().map(|(k, v)| format!("{k:<width$}  {v}\n")).collect()
    }
}

fn shrinkage_criterion<T: Scalar>(p: T, r2: T, s: T) -> T {
    p / ((s - T::one()) * (-r2 / s).ln_1p())
}

/// Minimum development sample size for `p` candidate parameters.
pub fn min_sample_size<T: Scalar>(
    p: u64,
    phi: T,
    r2_cs_adj: T,
    shrinkage: T,
    delta: T,
) -> Result<SampleSizeReport<T>, SampleSizeError> {
    if p == 0 {
        return Err(SampleSizeError::NoParameters);
    }
    let max_r2 = max_cox_snell(phi)?;
    if !(r2_cs_adj > T::zero() && r2_cs_adj < shrinkage && shrinkage < T::one()) {
        return Err(SampleSizeError::Shrinkage { r2: r2_cs_adj.as_f64(), shrinkage: shrinkage.as_f64() });
    }
    if !(delta > T::zero()) {
        return Err(SampleSizeError::Margin(delta.as_f64()));
    }
    let pt = T::from_u64(p).unwrap();
    let n1 = shrinkage_criterion(pt, r2_cs_adj, shrinkage);
    let s2 = r2_cs_adj / (r2_cs_adj + delta * max_r2);
    let n2 = shrinkage_criterion(pt, r2_cs_adj, s2);
    let z = T::lit(1.96) / delta;
    let n3 = z * z * phi * (T::one() - phi);
    let worst = n1.max(n2).max(n3);
    let n_min = (worst.is_finite() && worst.as_f64() < u64::MAX as f64).then(|| worst.ceil().as_f64() as u64);
    Ok(SampleSizeReport {
        n_available: None,
        events: None,
        df: p,
        prevalence: phi,
        epv: None,
        r2_nagelkerke: None,
        r2_cox_snell_adj: r2_cs_adj,
        shrinkage_target: shrinkage,
        delta,
        n_criterion_1: n1,
        n_criterion_2: n2,
        n_criterion_3: n3,
        n_min,
        adequate: None,
    })
}
