use indexmap::IndexMap;

use super::{ModifierEffects, NmrError, NmrSpec, NmrStudy, Result, RiskSlope, TreatmentEffects};
use crate::dataset::TreatmentRegistry;
use crate::scalar::{shifted_mean, softplus, Scalar};

pub(crate) const GAMMA0: &str = "gamma0";
const SIGMA_D: &str = "sigma_d";
const SIGMA_G: &str = "sigma_g";
const SIGMA_G0: &str = "sigma_g0";

pub(crate) fn delta_name(treatment: &str) -> String {
    format!("delta[{treatment}]")
}

pub(crate) fn gamma_name(treatment: &str) -> String {
    format!("gamma[{treatment}]")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParameterRole {
    StudyBaseline { study: String },
    Delta { treatment: String },
    Gamma0,
    StudySlope { study: String },
    Gamma { treatment: String },
    StudyContrast { study: String, treatment: String },
    StudyModifier { study: String, treatment: String },
    /// Heterogeneity standard deviation, sampled on the log scale.
    Sigma,
}

/// Linear combination `Σ coef · θ[index]`.
pub(crate) type Terms<T> = Vec<(usize, T)>;

#[derive(Debug, Clone)]
pub(crate) enum PriorTerm<T> {
    Location { param: usize },
    Hierarchical { param: usize, mean: Terms<T>, log_sigma: usize },
    HalfNormal { param: usize },
}

/// Patients of one study arm; they share intercept and slope.
#[derive(Debug, Clone)]
pub(crate) struct Cell<T> {
    pub study: usize,
    pub treatment: String,
    pub centered: Vec<T>,
    pub sum_y: T,
    pub sum_yc: T,
    pub intercept: Terms<T>,
    pub slope: Terms<T>,
}

impl<T: Scalar> Cell<T> {
    pub fn log_likelihood(&self, a: T, b: T) -> T {
        let n = T::from_count(self.centered.len());
        if b == T::zero() {
            return a * self.sum_y - n * softplus(a);
        }
        let mut s = T::zero();
        for &c in &self.centered {
            s = s + softplus(a + b * c);
        }
        a * self.sum_y + b * self.sum_yc - s
    }
}

pub(crate) fn combine<T: Scalar>(terms: &Terms<T>, theta: &[T]) -> T {
    terms.iter().fold(T::zero(), |acc, &(k, c)| acc + c * theta[k])
}

/// Likelihood and prior structure ready for sampling.
#[derive(Debug, Clone)]
pub struct NmrModel<T> {
    pub(crate) names: Vec<String>,
    pub(crate) roles: Vec<ParameterRole>,
    pub(crate) cells: Vec<Cell<T>>,
    pub(crate) priors: Vec<PriorTerm<T>>,
    /// Cells whose linear predictor involves each parameter.
    pub(crate) param_cells: Vec<Vec<usize>>,
    /// Prior terms involving each parameter.
    pub(crate) param_priors: Vec<Vec<usize>>,
    pub(crate) spec: NmrSpec<T>,
    pub(crate) treatments: Vec<String>,
    pub(crate) reference: String,
    pub(crate) study_ids: Vec<String>,
    pub(crate) centering: IndexMap<String, T>,
}

impl<T: Scalar> NmrModel<T> {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn roles(&self) -> &[ParameterRole] {
        &self.roles
    }

    pub fn spec(&self) -> &NmrSpec<T> {
        &self.spec
    }

    pub fn treatments(&self) -> &[String] {
        &self.treatments
    }

    pub fn reference(&self) -> &str {
        &self.reference
    }

    pub fn centering(&self) -> &IndexMap<String, T> {
        &self.centering
    }

    pub fn n_patients(&self) -> usize {
        self.cells.iter().map(|c| c.centered.len()).sum()
    }

    /// Centered logit risks of one study, arm by arm in registry order.
    pub fn centered_risks(&self, study: &str) -> Vec<T> {
        let Some(j) = self.study_ids.iter().position(|s| s == study) else { return Vec::new() };
        self.cells.iter().filter(|c| c.study == j).flat_map(|c| c.centered.iter().copied()).collect()
    }

    /// Named intercept and slope terms of the linear predictor for one arm of one study.
    #[allow(clippy::type_complexity)]
    pub fn linear_predictor_terms(&self, study: &str, treatment: &str) -> Option<(Vec<(String, T)>, Vec<(String, T)>)> {
        let j = self.study_ids.iter().position(|s| s == study)?;
        let cell = self.cells.iter().find(|c| c.study == j && c.treatment == treatment)?;
        let named = |terms: &Terms<T>| terms.iter().map(|&(k, c)| (self.names[k].clone(), c)).collect();
        Some((named(&cell.intercept), named(&cell.slope)))
    }

    pub(crate) fn log_prior_term(&self, term: &PriorTerm<T>, theta: &[T]) -> T {
        let half = T::lit(0.5);
        match term {
            PriorTerm::Location { param } => -half * theta[*param] * theta[*param] / self.spec.prior_variance,
            PriorTerm::Hierarchical { param, mean, log_sigma } => {
                let ls = theta[*log_sigma];
                let z = (theta[*param] - combine(mean, theta)) / ls.exp();
                -half * z * z - ls
            }
            PriorTerm::HalfNormal { param } => {
                let z = theta[*param].exp() / self.spec.heterogeneity_scale;
                // Density of σ plus the log-Jacobian of σ = exp(θ).
                -half * z * z + theta[*param]
            }
        }
    }

    pub(crate) fn log_posterior(&self, theta: &[T]) -> T {
        let prior: T = self.priors.iter().map(|t| self.log_prior_term(t, theta)).sum();
        let ll: T = self
            .cells
            .iter()
            .map(|c| c.log_likelihood(combine(&c.intercept, theta), combine(&c.slope, theta)))
            .sum();
        prior + ll
    }
}

struct Builder<T> {
    names: Vec<String>,
    roles: Vec<ParameterRole>,
    priors: Vec<PriorTerm<T>>,
}

impl<T: Scalar> Builder<T> {
    fn add(&mut self, name: String, role: ParameterRole) -> usize {
        self.names.push(name);
        self.roles.push(role);
        self.names.len() - 1
    }

    fn location(&mut self, name: String, role: ParameterRole) -> usize {
        let k = self.add(name, role);
        self.priors.push(PriorTerm::Location { param: k });
        k
    }
}

/// Contrast `b − a` of basic parameters, with the reference entry omitted.
fn contrast<T: Scalar>(basic: &IndexMap<String, usize>, from: &str, to: &str) -> Terms<T> {
    let mut terms = Vec::new();
    if let Some(&k) = basic.get(to) {
        terms.push((k, T::one()));
    }
    if let Some(&k) = basic.get(from) {
        terms.push((k, -T::one()));
    }
    terms
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut y = x;
    while parent[y] != r {
        let next = parent[y];
        parent[y] = r;
        y = next;
    }
    r
}

/// Validates the network and lays out parameters, priors and patient cells.
pub fn build_likelihood<T: Scalar>(
    studies: &[NmrStudy<T>],
    registry: &TreatmentRegistry,
    spec: &NmrSpec<T>,
) -> Result<NmrModel<T>> {
    spec.validate()?;
    registry.validate().map_err(|e| NmrError::Spec(e.to_string()))?;
    if studies.is_empty() {
        return Err(NmrError::Empty);
    }

    // Arms per study, registry order.
    let mut study_arms: Vec<Vec<String>> = Vec::with_capacity(studies.len());
    for s in studies {
        for p in &s.patients {
            if !registry.contains(&p.treatment) {
                return Err(NmrError::UnknownTreatment { study: s.study_id.clone(), treatment: p.treatment.clone() });
            }
            if !p.logit_risk.is_finite() {
                return Err(NmrError::NonFiniteRisk { study: s.study_id.clone() });
            }
        }
        if !registry.contains(&s.baseline) {
            return Err(NmrError::UnknownTreatment { study: s.study_id.clone(), treatment: s.baseline.clone() });
        }
        let arms: Vec<String> = registry
            .treatments
            .iter()
            .filter(|t| s.patients.iter().any(|p| &p.treatment == *t))
            .cloned()
            .collect();
        if !arms.contains(&s.baseline) {
            return Err(NmrError::EmptyBaseline { study: s.study_id.clone(), treatment: s.baseline.clone() });
        }
        if arms.len() < 2 {
            return Err(NmrError::TooFewArms { study: s.study_id.clone(), arms: arms.len() });
        }
        study_arms.push(arms);
    }

    let treatments: Vec<String> =
        registry.treatments.iter().filter(|t| study_arms.iter().any(|a| a.contains(t))).cloned().collect();
    if !treatments.contains(&registry.reference) {
        return Err(NmrError::MissingReference(registry.reference.clone()));
    }
    let mut parent: Vec<usize> = (0..treatments.len()).collect();
    for arms in &study_arms {
        let first = treatments.iter().position(|t| *t == arms[0]).unwrap();
        for a in &arms[1..] {
            let k = treatments.iter().position(|t| t == a).unwrap();
            let (ra, rb) = (find(&mut parent, first), find(&mut parent, k));
            parent[ra] = rb;
        }
    }
    let mut components: IndexMap<usize, Vec<String>> = IndexMap::new();
    for (k, t) in treatments.iter().enumerate() {
        let root = find(&mut parent, k);
        components.entry(root).or_default().push(t.clone());
    }
    if components.len() > 1 {
        return Err(NmrError::Disconnected(components.into_values().collect()));
    }

    let mut b = Builder { names: Vec::new(), roles: Vec::new(), priors: Vec::new() };
    let u: Vec<usize> = studies
        .iter()
        .map(|s| b.location(format!("u[{}]", s.study_id), ParameterRole::StudyBaseline { study: s.study_id.clone() }))
        .collect();
    let non_ref: Vec<&String> = treatments.iter().filter(|t| **t != registry.reference).collect();
    let delta: IndexMap<String, usize> = non_ref
        .iter()
        .map(|t| ((*t).clone(), b.location(delta_name(t), ParameterRole::Delta { treatment: (*t).clone() })))
        .collect();

    let gamma0 = match spec.risk_slope {
        RiskSlope::Common | RiskSlope::Exchangeable => Some(b.location(GAMMA0.into(), ParameterRole::Gamma0)),
        _ => None,
    };
    let study_slopes: Option<Vec<usize>> = match spec.risk_slope {
        RiskSlope::Exchangeable | RiskSlope::Independent => Some(
            studies
                .iter()
                .map(|s| b.add(format!("g0[{}]", s.study_id), ParameterRole::StudySlope { study: s.study_id.clone() }))
                .collect(),
        ),
        _ => None,
    };
    let gamma: IndexMap<String, usize> = match spec.modifier_effects {
        ModifierEffects::Omitted => IndexMap::new(),
        _ => non_ref
            .iter()
            .map(|t| ((*t).clone(), b.location(gamma_name(t), ParameterRole::Gamma { treatment: (*t).clone() })))
            .collect(),
    };

    // Study-specific contrasts for random structures: (study, arm) -> parameter.
    let mut study_contrast: IndexMap<(usize, String), usize> = IndexMap::new();
    let mut study_modifier: IndexMap<(usize, String), usize> = IndexMap::new();
    for (j, s) in studies.iter().enumerate() {
        for arm in study_arms[j].iter().filter(|a| **a != s.baseline) {
            if spec.treatment_effects == TreatmentEffects::Random {
                let k = b.add(
                    format!("d[{},{}]", s.study_id, arm),
                    ParameterRole::StudyContrast { study: s.study_id.clone(), treatment: arm.clone() },
                );
                study_contrast.insert((j, arm.clone()), k);
            }
            if spec.modifier_effects == ModifierEffects::Random {
                let k = b.add(
                    format!("g[{},{}]", s.study_id, arm),
                    ParameterRole::StudyModifier { study: s.study_id.clone(), treatment: arm.clone() },
                );
                study_modifier.insert((j, arm.clone()), k);
            }
        }
    }
    let sigma = |b: &mut Builder<T>, name: &str| {
        let k = b.add(name.into(), ParameterRole::Sigma);
        b.priors.push(PriorTerm::HalfNormal { param: k });
        k
    };
    if !study_contrast.is_empty() {
        let ls = sigma(&mut b, SIGMA_D);
        for ((j, arm), &k) in &study_contrast {
            let mean = contrast(&delta, &studies[*j].baseline, arm);
            b.priors.push(PriorTerm::Hierarchical { param: k, mean, log_sigma: ls });
        }
    }
    if !study_modifier.is_empty() {
        let ls = sigma(&mut b, SIGMA_G);
        for ((j, arm), &k) in &study_modifier {
            let mean = contrast(&gamma, &studies[*j].baseline, arm);
            b.priors.push(PriorTerm::Hierarchical { param: k, mean, log_sigma: ls });
        }
    }
    if let Some(slopes) = &study_slopes {
        match gamma0 {
            Some(g0) => {
                let ls = sigma(&mut b, SIGMA_G0);
                for &k in slopes {
                    b.priors.push(PriorTerm::Hierarchical { param: k, mean: vec![(g0, T::one())], log_sigma: ls });
                }
            }
            None => {
                for &k in slopes {
                    b.priors.push(PriorTerm::Location { param: k });
                }
            }
        }
    }

    let mut cells = Vec::new();
    let mut centering = IndexMap::new();
    for (j, s) in studies.iter().enumerate() {
        let risks: Vec<T> = s.patients.iter().map(|p| p.logit_risk).collect();
        let center = shifted_mean(&risks);
        centering.insert(s.study_id.clone(), center);
        let slope_base: Terms<T> = match (&study_slopes, gamma0) {
            (Some(slopes), _) => vec![(slopes[j], T::one())],
            (None, Some(g0)) => vec![(g0, T::one())],
            (None, None) => Vec::new(),
        };
        for arm in &study_arms[j] {
            let mut intercept = vec![(u[j], T::one())];
            let mut slope = slope_base.clone();
            if *arm != s.baseline {
                match study_contrast.get(&(j, arm.clone())) {
                    Some(&k) => intercept.push((k, T::one())),
                    None => intercept.extend(contrast(&delta, &s.baseline, arm)),
                }
                match study_modifier.get(&(j, arm.clone())) {
                    Some(&k) => slope.push((k, T::one())),
                    None => slope.extend(contrast(&gamma, &s.baseline, arm)),
                }
            }
            let mut centered = Vec::new();
            let mut sum_y = T::zero();
            let mut sum_yc = T::zero();
            for p in s.patients.iter().filter(|p| &p.treatment == arm) {
                let c = p.logit_risk - center;
                centered.push(c);
                if p.outcome {
                    sum_y = sum_y + T::one();
                    sum_yc = sum_yc + c;
                }
            }
            cells.push(Cell { study: j, treatment: arm.clone(), centered, sum_y, sum_yc, intercept, slope });
        }
    }

    let width = b.names.len();
    let mut param_cells = vec![Vec::new(); width];
    for (ci, cell) in cells.iter().enumerate() {
        for &(k, _) in cell.intercept.iter().chain(&cell.slope) {
            if param_cells[k].last() != Some(&ci) {
                param_cells[k].push(ci);
            }
        }
    }
    let mut param_priors = vec![Vec::new(); width];
    for (ti, term) in b.priors.iter().enumerate() {
        let mut involved = match term {
            PriorTerm::Location { param } | PriorTerm::HalfNormal { param } => vec![*param],
            PriorTerm::Hierarchical { param, mean, log_sigma } => {
                let mut v = vec![*param, *log_sigma];
                v.extend(mean.iter().map(|&(k, _)| k));
                v
            }
        };
        involved.sort_unstable();
        involved.dedup();
        for k in involved {
            param_priors[k].push(ti);
        }
    }

    Ok(NmrModel {
        names: b.names,
        roles: b.roles,
        cells,
        priors: b.priors,
        param_cells,
        param_priors,
        spec: spec.clone(),
        treatments,
        reference: registry.reference.clone(),
        study_ids: studies.iter().map(|s| s.study_id.clone()).collect(),
        centering,
    })
}
