//! Personalized predictions from the stage-two posterior and an external anchor:
//!
//! ```text
//! logit p_t = a + δ_t + (γ0 + γ_t) · (logit R − logit R̄)
//! ```
//!
//! evaluated per retained draw, with `a` drawn around the anchor estimate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nmr::{NmrError, NmrPosterior};
use crate::risk::{fit_mle, DesignMatrix, FitError};
use crate::scalar::{expit, logit, quantile_sorted, shifted_mean, sort_scalars, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PredictionError {
    #[error("no anchoring records")]
    Empty,
    #[error("{0} logit risks for {1} outcomes")]
    Length(usize, usize),
    #[error("anchoring outcomes contain a single class")]
    SingleClass,
    #[error("anchor fit failed: {0}")]
    Fit(FitError),
    #[error("stage-one fingerprints differ: posterior {posterior:?}, anchor {anchor:?}")]
    FingerprintMismatch { posterior: Option<String>, anchor: Option<String> },
    #[error("unknown treatment {0}")]
    UnknownTreatment(String),
    #[error("cutoffs must satisfy 0 < low < high < 1, got ({0}, {1})")]
    Cutoffs(f64, f64),
    #[error("grid point {0} is outside (0, 1)")]
    Grid(f64),
    #[error("non-finite patient logit risk")]
    NonFinite,
    #[error(transparent)]
    Posterior(#[from] NmrError),
}

pub type Result<T, E = PredictionError> = std::result::Result<T, E>;

/// Reference-treatment log-odds at the mean risk of the prediction population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionAnchor<T> {
    pub alpha: T,
    pub alpha_se: T,
    pub mean_logit_risk: T,
    /// Fitted slope on centered logit risk; reported, not used for prediction.
    pub slope: Option<T>,
    pub n: usize,
    pub events: usize,
    pub source: String,
    pub stage1_fingerprint: Option<String>,
}

/// Logistic fit of outcome on centered logit risk over pooled untreated records; the
/// intercept is the anchor.
pub fn estimate_anchor<T: Scalar>(
    logit_risks: &[T],
    outcomes: &[bool],
    source: impl Into<String>,
) -> Result<PredictionAnchor<T>> {
    if logit_risks.len() != outcomes.len() {
        return Err(PredictionError::Length(logit_risks.len(), outcomes.len()));
    }
    if logit_risks.is_empty() {
        return Err(PredictionError::Empty);
    }
    if logit_risks.iter().any(|x| !x.is_finite()) {
        return Err(PredictionError::NonFinite);
    }
    if outcomes.iter().all(|&y| y == outcomes[0]) {
        return Err(PredictionError::SingleClass);
    }
    let mean = shifted_mean(logit_risks);
    let centered: Vec<T> = logit_risks.iter().map(|&x| x - mean).collect();
    let fit_error = |e| match e {
        FitError::SingleClass => PredictionError::SingleClass,
        other => PredictionError::Fit(other),
    };
    let design =
        DesignMatrix::from_columns(vec!["centered_logit_risk".into()], vec![centered], outcomes).map_err(fit_error)?;
    let model = fit_mle(&design).map_err(fit_error)?;
    let se = model
        .standard_errors
        .as_ref()
        .and_then(|s| s.get("(intercept)").copied())
        .unwrap_or(T::zero());
    let slope = design.is_active(0).then(|| model.coefficients[0]);
    Ok(PredictionAnchor {
        alpha: model.intercept,
        alpha_se: se,
        mean_logit_risk: mean,
        slope,
        n: design.n(),
        events: design.events(),
        source: source.into(),
        stage1_fingerprint: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictOptions {
    /// Seed of the anchor draws; reused for every patient so predictions are comparable.
    pub seed: u64,
    /// Use the anchor point estimate in every draw.
    pub fixed_anchor: bool,
    /// Baseline-risk cutoffs separating low, middle and high risk.
    pub cutoffs: (f64, f64),
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self { seed: 1, fixed_anchor: false, cutoffs: (0.30, 0.50) }
    }
}

impl PredictOptions {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.cutoffs;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(PredictionError::Cutoffs(lo, hi));
        }
        Ok(())
    }

    pub fn risk_group(&self, risk: f64) -> RiskGroup {
        if risk < self.cutoffs.0 {
            RiskGroup::Low
        } else if risk > self.cutoffs.1 {
            RiskGroup::High
        } else {
            RiskGroup::Mid
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskGroup {
    Low,
    Mid,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentPrediction<T> {
    pub treatment: String,
    pub reference: bool,
    /// Posterior mean of the outcome probability.
    pub probability: T,
    pub cr_low: T,
    pub cr_high: T,
    /// Posterior mean odds ratio against the reference treatment.
    pub odds_ratio: T,
    pub or_low: T,
    pub or_high: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult<T> {
    pub logit_risk: T,
    pub risk: T,
    pub risk_group: RiskGroup,
    pub treatments: Vec<TreatmentPrediction<T>>,
}

impl<T: Scalar> PredictionResult<T> {
    pub fn get(&self, treatment: &str) -> Option<&TreatmentPrediction<T>> {
        self.treatments.iter().find(|t| t.treatment == treatment)
    }
}

struct TreatmentDraws<T> {
    name: String,
    delta: Vec<T>,
    gamma: Vec<T>,
}

/// Posterior columns and anchor draws extracted once, for repeated predictions.
pub struct Predictor<T> {
    treatments: Vec<TreatmentDraws<T>>,
    reference: String,
    gamma0: Vec<T>,
    anchor_draws: Vec<T>,
    mean_logit_risk: T,
    options: PredictOptions,
}

impl<T: Scalar> Predictor<T> {
    pub fn new(posterior: &NmrPosterior<T>, anchor: &PredictionAnchor<T>, options: PredictOptions) -> Result<Self> {
        options.validate()?;
        if posterior.stage1_fingerprint != anchor.stage1_fingerprint {
            return Err(PredictionError::FingerprintMismatch {
                posterior: posterior.stage1_fingerprint.clone(),
                anchor: anchor.stage1_fingerprint.clone(),
            });
        }
        let treatments = posterior
            .treatments
            .iter()
            .map(|t| {
                Ok(TreatmentDraws { name: t.clone(), delta: posterior.delta_draws(t)?, gamma: posterior.gamma_draws(t)? })
            })
            .collect::<Result<Vec<_>>>()?;
        let n = posterior.n_draws();
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let anchor_draws = (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                if options.fixed_anchor {
                    anchor.alpha
                } else {
                    anchor.alpha + anchor.alpha_se * T::lit(z)
                }
            })
            .collect();
        Ok(Self {
            treatments,
            reference: posterior.reference.clone(),
            gamma0: posterior.gamma0_draws(),
            anchor_draws,
            mean_logit_risk: anchor.mean_logit_risk,
            options,
        })
    }

    pub fn options(&self) -> &PredictOptions {
        &self.options
    }

    pub fn treatment_names(&self) -> impl Iterator<Item = &str> {
        self.treatments.iter().map(|t| t.name.as_str())
    }

    pub fn reference(&self) -> &str {
        &self.reference
    }

    /// Per-draw log-odds of the outcome on one treatment.
    pub fn log_odds_draws(&self, patient_logit_risk: T, treatment: &str) -> Result<Vec<T>> {
        let t = self
            .treatments
            .iter()
            .find(|t| t.name == treatment)
            .ok_or_else(|| PredictionError::UnknownTreatment(treatment.into()))?;
        Ok(self.log_odds(patient_logit_risk - self.mean_logit_risk, t))
    }

    fn log_odds(&self, x: T, t: &TreatmentDraws<T>) -> Vec<T> {
        (0..self.anchor_draws.len())
            .map(|d| self.anchor_draws[d] + t.delta[d] + (self.gamma0[d] + t.gamma[d]) * x)
            .collect()
    }

    /// Prediction for every treatment, or for `only` (the reference is always included).
    pub fn predict(&self, patient_logit_risk: T, only: Option<&[String]>) -> Result<PredictionResult<T>> {
        if !patient_logit_risk.is_finite() {
            return Err(PredictionError::NonFinite);
        }
        if let Some(names) = only {
            if let Some(bad) = names.iter().find(|n| !self.treatments.iter().any(|t| &t.name == *n)) {
                return Err(PredictionError::UnknownTreatment(bad.clone()));
            }
        }
        let x = patient_logit_risk - self.mean_logit_risk;
        let reference = self.treatments.iter().find(|t| t.name == self.reference).expect("reference in network");
        let ref_eta = self.log_odds(x, reference);
        let mut entries = Vec::new();
        for t in &self.treatments {
            let is_ref = t.name == self.reference;
            if !is_ref && only.is_some_and(|names| !names.contains(&t.name)) {
                continue;
            }
            let eta = self.log_odds(x, t);
            let probs: Vec<T> = eta.iter().map(|&e| expit(e)).collect();
            let (probability, cr_low, cr_high) = summarize(probs);
            let (odds_ratio, or_low, or_high) = if is_ref {
                (T::one(), T::one(), T::one())
            } else {
                summarize(eta.iter().zip(&ref_eta).map(|(&a, &b)| (a - b).exp()).collect())
            };
            entries.push(TreatmentPrediction {
                treatment: t.name.clone(),
                reference: is_ref,
                probability,
                cr_low,
                cr_high,
                odds_ratio,
                or_low,
                or_high,
            });
        }
        let risk = expit(patient_logit_risk);
        Ok(PredictionResult {
            logit_risk: patient_logit_risk,
            risk,
            risk_group: self.options.risk_group(risk.as_f64()),
            treatments: entries,
        })
    }
}

/// Mean and 2.5% / 97.5% quantiles.
fn summarize<T: Scalar>(mut values: Vec<T>) -> (T, T, T) {
    let mean = shifted_mean(&values);
    sort_scalars(&mut values);
    (mean, quantile_sorted(&values, 0.025), quantile_sorted(&values, 0.975))
}

pub fn predict<T: Scalar>(
    patient_logit_risk: T,
    posterior: &NmrPosterior<T>,
    anchor: &PredictionAnchor<T>,
    options: &PredictOptions,
) -> Result<PredictionResult<T>> {
    Predictor::new(posterior, anchor, *options)?.predict(patient_logit_risk, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTreatment<T> {
    pub treatment: String,
    pub mean_probability: T,
    pub mean_odds_ratio: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow<T> {
    /// `all`, `low` (risk below the lower cutoff) or `high` (above the upper cutoff).
    pub group: String,
    pub patients: usize,
    pub treatments: Vec<GroupTreatment<T>>,
}

/// Average predicted probability and odds ratio per treatment, for all patients and the
/// low- and high-risk groups. Empty groups are left out.
pub fn risk_group_summary<T: Scalar>(predictions: &[PredictionResult<T>], cutoffs: (f64, f64)) -> Result<Vec<GroupRow<T>>> {
    PredictOptions { cutoffs, ..PredictOptions::default() }.validate()?;
    let groups: [(&str, Box<dyn Fn(f64) -> bool>); 3] = [
        ("all", Box::new(|_| true)),
        ("low", Box::new(move |r| r < cutoffs.0)),
        ("high", Box::new(move |r| r > cutoffs.1)),
    ];
    let mut rows = Vec::new();
    for (label, member) in groups.iter() {
        let selected: Vec<&PredictionResult<T>> = predictions.iter().filter(|p| member(p.risk.as_f64())).collect();
        if selected.is_empty() {
            continue;
        }
        let names: Vec<&str> = selected[0].treatments.iter().map(|t| t.treatment.as_str()).collect();
        let treatments = names
            .iter()
            .map(|&name| {
                let entries: Vec<&TreatmentPrediction<T>> =
                    selected.iter().filter_map(|p| p.get(name)).collect();
                let k = T::from_count(entries.len());
                GroupTreatment {
                    treatment: name.to_string(),
                    mean_probability: entries.iter().map(|e| e.probability).sum::<T>() / k,
                    mean_odds_ratio: entries.iter().map(|e| e.odds_ratio).sum::<T>() / k,
                }
            })
            .collect();
        rows.push(GroupRow { group: label.to_string(), patients: selected.len(), treatments });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NntDirection {
    /// Treating prevents events.
    Benefit,
    /// Treating causes events.
    Harm,
    Undefined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Nnt {
    pub count: Option<u64>,
    pub direction: NntDirection,
}

/// Number needed to treat for an absolute risk reduction (negative values mean harm).
pub fn nnt(absolute_risk_difference: f64) -> Nnt {
    let ard = absolute_risk_difference;
    if ard == 0.0 || !ard.is_finite() {
        return Nnt { count: None, direction: NntDirection::Undefined };
    }
    // Guard against 1/ARD landing a rounding error above an integer.
    let raw = (1.0 / ard.abs().min(1.0)) * (1.0 - 1e-12);
    Nnt {
        count: Some(raw.ceil() as u64),
        direction: if ard > 0.0 { NntDirection::Benefit } else { NntDirection::Harm },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint<T> {
    pub risk: T,
    pub treatment: String,
    pub probability: T,
    pub cr_low: T,
    pub cr_high: T,
    pub odds_ratio: T,
    pub or_low: T,
    pub or_high: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curves<T> {
    pub points: Vec<CurvePoint<T>>,
    /// Lowest and highest baseline risk of the supplied population.
    pub observed_range: Option<(T, T)>,
}

impl<T: Scalar> Curves<T> {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("risk,treatment,probability,cr_low,cr_high,odds_ratio,or_low,or_high,in_observed_range\n");
        for p in &self.points {
            let inside = match self.observed_range {
                Some((lo, hi)) => (p.risk >= lo && p.risk <= hi).to_string(),
                None => String::new(),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                p.risk, p.treatment, p.probability, p.cr_low, p.cr_high, p.odds_ratio, p.or_low, p.or_high, inside
            ));
        }
        out
    }
}

/// `n` evenly spaced baseline risks strictly inside (0, 1).
pub fn risk_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|k| k as f64 / (n + 1) as f64).collect()
}

/// Probability and odds-ratio curves over baseline risk.
pub fn emit_curves<T: Scalar>(
    predictor: &Predictor<T>,
    grid: &[T],
    population_logit_risks: Option<&[T]>,
) -> Result<Curves<T>> {
    let mut points = Vec::with_capacity(grid.len() * predictor.treatments.len());
    for &risk in grid {
        if !(risk > T::zero() && risk < T::one()) {
            return Err(PredictionError::Grid(risk.as_f64()));
        }
        let res = predictor.predict(logit(risk), None)?;
        for t in res.treatments {
            points.push(CurvePoint {
                risk,
                treatment: t.treatment,
                probability: t.probability,
                cr_low: t.cr_low,
                cr_high: t.cr_high,
                odds_ratio: t.odds_ratio,
                or_low: t.or_low,
                or_high: t.or_high,
            });
        }
    }
    let observed_range = population_logit_risks.filter(|p| !p.is_empty()).map(|p| {
        let lo = p.iter().copied().fold(T::infinity(), T::min);
        let hi = p.iter().copied().fold(T::neg_infinity(), T::max);
        (expit(lo), expit(hi))
    });
    Ok(Curves { points, observed_range })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmr::{McmcSettings, NmrSpec, ParameterSummary};
    use indexmap::IndexMap;

    /// Posterior with the given per-draw columns (two chains, equal halves).
    fn posterior(names: &[&str], columns: &[Vec<f64>]) -> NmrPosterior<f64> {
        let n = columns[0].len();
        let mut draws = Vec::new();
        for d in 0..n {
            for c in columns {
                draws.push(c[d]);
            }
        }
        NmrPosterior {
            names: names.iter().map(|s| s.to_string()).collect(),
            chains: 2,
            draws_per_chain: n / 2,
            draws,
            diagnostics: Vec::<ParameterSummary>::new(),
            spec: NmrSpec { mcmc: McmcSettings { chains: 2, iterations: 20, burn_in: 0, thin: 1 }, ..NmrSpec::default() },
            treatments: vec!["placebo".into(), "N".into()],
            reference: "placebo".into(),
            centering: IndexMap::new(),
            stage1_fingerprint: None,
        }
    }

    fn anchor(alpha: f64, se: f64, mean: f64) -> PredictionAnchor<f64> {
        PredictionAnchor {
            alpha,
            alpha_se: se,
            mean_logit_risk: mean,
            slope: None,
            n: 1,
            events: 1,
            source: "test".into(),
            stage1_fingerprint: None,
        }
    }

    #[test]
    fn hand_evaluated_case() {
        let post = posterior(&["delta[N]", "gamma0", "gamma[N]"], &[vec![-1.22; 4], vec![1.26; 4], vec![-0.26; 4]]);
        let opts = PredictOptions { fixed_anchor: true, ..Default::default() };
        let res = predict(0.4 + 1.0, &post, &anchor(-0.3, 0.1, 0.4), &opts).unwrap();
        let p = res.get("N").unwrap().probability;
        // −0.3 − 1.22 + (1.26 − 0.26)·1 = −0.52.
        assert!((p - expit(-0.52)).abs() < 1e-12);
        assert!((p - 0.373).abs() < 1e-3);
    }

    #[test]
    fn reference_at_mean_risk_is_anchor() {
        let post = posterior(&["delta[N]", "gamma0"], &[vec![-1.0, -0.8, -1.1, -0.9], vec![1.0, 1.1, 0.9, 1.2]]);
        let res = predict(0.25, &post, &anchor(-0.3, 0.0, 0.25), &PredictOptions::default()).unwrap();
        let r = res.get("placebo").unwrap();
        assert_eq!(r.probability, expit(-0.3));
        assert_eq!(r.cr_low, r.cr_high);
        assert_eq!(r.odds_ratio, 1.0);
        assert!(r.reference);
    }

    #[test]
    fn nnt_anchors() {
        assert_eq!(nnt(0.15).count, Some(7));
        assert_eq!(nnt(0.10).count, Some(10));
        assert_eq!(nnt(0.0).direction, NntDirection::Undefined);
        assert_eq!(nnt(-0.25), Nnt { count: Some(4), direction: NntDirection::Harm });
        assert_eq!(nnt(0.5).count, Some(2));
    }

    #[test]
    fn fingerprint_mismatch_rejected() {
        let mut post = posterior(&["delta[N]"], &[vec![0.0; 4]]);
        post.stage1_fingerprint = Some("a".into());
        let mut a = anchor(0.0, 0.0, 0.0);
        a.stage1_fingerprint = Some("b".into());
        assert!(matches!(
            predict(0.0, &post, &a, &PredictOptions::default()),
            Err(PredictionError::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn unknown_treatment_and_subsets() {
        let post = posterior(&["delta[N]"], &[vec![-0.5; 4]]);
        let p = Predictor::new(&post, &anchor(0.0, 0.0, 0.0), PredictOptions::default()).unwrap();
        assert!(matches!(p.predict(0.0, Some(&["X".into()])), Err(PredictionError::UnknownTreatment(_))));
        let only = p.predict(0.0, Some(&[])).unwrap();
        assert_eq!(only.treatments.len(), 1);
        assert_eq!(only.treatments[0].treatment, "placebo");
    }

    #[test]
    fn anchor_constant_scores() {
        let lr = vec![0.7; 10];
        let y = [true, false, true, true, false, false, true, false, true, true];
        let a = estimate_anchor(&lr, &y, "pooled").unwrap();
        assert_eq!(a.mean_logit_risk, 0.7);
        assert!((a.alpha - logit(0.6f64)).abs() < 1e-12);
        assert_eq!(a.slope, None);
        assert!(matches!(estimate_anchor::<f64>(&[], &[], "x"), Err(PredictionError::Empty)));
        assert!(matches!(estimate_anchor(&[0.1, 0.2], &[true, true], "x"), Err(PredictionError::SingleClass)));
    }

    #[test]
    fn group_summary_rows() {
        let post = posterior(&["delta[N]", "gamma0"], &[vec![-0.5; 4], vec![1.0; 4]]);
        let p = Predictor::new(&post, &anchor(-0.5, 0.0, -0.5), PredictOptions::default()).unwrap();
        let preds: Vec<_> = [0.1, 0.2, 0.25].iter().map(|&r| p.predict(logit(r), None).unwrap()).collect();
        let rows = risk_group_summary(&preds, (0.30, 0.50)).unwrap();
        assert_eq!(rows.iter().map(|r| r.group.as_str()).collect::<Vec<_>>(), ["all", "low"]);
        for row in &rows {
            for gt in &row.treatments {
                let vals: Vec<f64> = preds.iter().map(|q| q.get(&gt.treatment).unwrap().probability).collect();
                let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                assert!(gt.mean_probability >= lo && gt.mean_probability <= hi);
            }
        }
        assert!(risk_group_summary(&preds, (0.5, 0.3)).is_err());
    }

    #[test]
    fn curves_reference_or_is_one_and_grid_checked() {
        let post = posterior(&["delta[N]", "gamma0", "gamma[N]"], &[vec![-0.5; 4], vec![1.0; 4], vec![0.0; 4]]);
        let p = Predictor::new(&post, &anchor(-0.5, 0.2, -0.5), PredictOptions::default()).unwrap();
        let grid = risk_grid(9);
        let curves = emit_curves(&p, &grid, Some(&[-1.0, 0.5])).unwrap();
        for pt in &curves.points {
            if pt.treatment == "placebo" {
                assert_eq!(pt.odds_ratio, 1.0);
            } else {
                assert!((pt.odds_ratio - (-0.5f64).exp()).abs() < 1e-12);
            }
        }
        let (lo, hi) = curves.observed_range.unwrap();
        assert!((lo - expit(-1.0)).abs() < 1e-15 && (hi - expit(0.5)).abs() < 1e-15);
        assert!(curves.to_csv().lines().count() == 1 + 18);
        assert!(matches!(emit_curves(&p, &[1.0], None), Err(PredictionError::Grid(_))));
    }

    #[test]
    fn anchor_recovers_intercept_at_mean_risk() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lr: Vec<f64> = (0..50_000).map(|_| -0.8 + 0.9 * rng.sample::<f64, _>(StandardNormal)).collect();
        let mean = lr.iter().sum::<f64>() / lr.len() as f64;
        let y: Vec<bool> = lr.iter().map(|&x| rng.random::<f64>() < expit(-0.3 + 1.2 * (x - mean))).collect();
        let a = estimate_anchor(&lr, &y, "placebo arms").unwrap();
        assert!((a.alpha + 0.3).abs() < 0.03, "{}", a.alpha);
        assert!((a.slope.unwrap() - 1.2).abs() < 0.1);
        assert!(a.alpha_se > 0.0 && a.alpha_se < 0.02);
    }

    #[test]
    fn modifier_is_log_ratio_of_odds_ratios() {
        let post = posterior(
            &["delta[N]", "gamma0", "gamma[N]"],
            &[vec![-1.0, -0.7, -1.3, -0.9], vec![1.1, 1.3, 1.2, 1.0], vec![0.3, -0.1, 0.2, 0.4]],
        );
        let p = Predictor::new(&post, &anchor(-0.2, 0.3, 0.1), PredictOptions::default()).unwrap();
        let (x1, x2) = (0.6, -0.9);
        let d = |x: f64, t: &str| p.log_odds_draws(x, t).unwrap();
        let (n1, n2, r1, r2) = (d(x1, "N"), d(x2, "N"), d(x1, "placebo"), d(x2, "placebo"));
        for k in 0..4 {
            let ratio = ((n1[k] - r1[k]).exp() / (n2[k] - r2[k]).exp()).ln() / (x1 - x2);
            assert!((ratio - post.gamma_draws("N").unwrap()[k]).abs() < 1e-12);
        }
        // At the anchor's mean risk the log-odds difference is the effect draw.
        let (n0, r0) = (d(0.1, "N"), d(0.1, "placebo"));
        let delta = post.delta_draws("N").unwrap();
        for k in 0..4 {
            assert!((n0[k] - r0[k] - delta[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn probability_monotone_in_risk_for_positive_slope() {
        let post = posterior(&["delta[N]", "gamma0", "gamma[N]"], &[vec![-0.5; 4], vec![1.0; 4], vec![0.2; 4]]);
        let p = Predictor::new(&post, &anchor(-0.3, 0.1, 0.0), PredictOptions::default()).unwrap();
        let probs: Vec<f64> = risk_grid(25).iter().map(|&r| p.predict(logit(r), None).unwrap().get("N").unwrap().probability).collect();
        assert!(probs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn single_point_grid_matches_predict() {
        let post = posterior(&["delta[N]", "gamma0", "gamma[N]"], &[vec![-0.5, -0.6, -0.4, -0.7], vec![1.0; 4], vec![0.1; 4]]);
        let p = Predictor::new(&post, &anchor(-0.3, 0.2, 0.0), PredictOptions::default()).unwrap();
        let curves = emit_curves(&p, &[0.3], None).unwrap();
        let direct = p.predict(logit(0.3), None).unwrap();
        for (pt, t) in curves.points.iter().zip(&direct.treatments) {
            assert_eq!(pt.treatment, t.treatment);
            assert_eq!((pt.probability, pt.cr_low, pt.cr_high), (t.probability, t.cr_low, t.cr_high));
            assert_eq!((pt.odds_ratio, pt.or_low, pt.or_high), (t.odds_ratio, t.or_low, t.or_high));
        }
    }
}
