use std::collections::{BTreeMap, BTreeSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{
    baseline_for, validate_schema, CovariateKind, CovariateSpec, CovariateValue, DatasetError, PatientRecord,
    Result, StudyDataset, Transform, TreatmentRegistry,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingnessScope {
    /// Fraction over all records.
    #[default]
    Pooled,
    /// Worst fraction over studies.
    PerStudy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub missing_threshold: f64,
    pub corr_threshold: f64,
    pub missingness_scope: MissingnessScope,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self { missing_threshold: 0.5, corr_threshold: 0.7, missingness_scope: MissingnessScope::Pooled }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropReason {
    #[serde(rename = "missingness")]
    Missingness,
    #[serde(rename = "correlation")]
    Correlation,
    #[serde(rename = "zero variance")]
    ZeroVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedCovariate {
    pub name: String,
    pub reason: DropReason,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub options: PreprocessOptions,
    pub records_in: usize,
    pub records_out: usize,
    pub missing_fraction: IndexMap<String, f64>,
    pub dropped: Vec<DroppedCovariate>,
    /// Retained covariates as declared (transforms and merges intact), with categorical
    /// levels narrowed to those observed in the cleaned data.
    pub retained: Vec<CovariateSpec>,
    pub notes: Vec<String>,
}

impl PreprocessReport {
    /// Schema describing the cleaned records themselves: transforms and merges already applied.
    pub fn cleaned_schema(&self) -> Vec<CovariateSpec> {
        self.retained
            .iter()
            .cloned()
            .map(|mut s| {
                s.transform = Transform::None;
                s.merge_map.clear();
                s
            })
            .collect()
    }

    pub fn dropped_names(&self) -> Vec<&str> {
        self.dropped.iter().map(|d| d.name.as_str()).collect()
    }
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Cleans IPD: drops covariates by missingness, zero variance and pairwise correlation,
/// applies transforms and category merges, then keeps complete cases only.
pub fn preprocess(
    studies: &[StudyDataset],
    schema: &[CovariateSpec],
    registry: &TreatmentRegistry,
    options: &PreprocessOptions,
) -> Result<(Vec<StudyDataset>, PreprocessReport)> {
    validate_schema(schema)?;
    for (name, t) in [("missing_threshold", options.missing_threshold), ("corr_threshold", options.corr_threshold)] {
        if !(t > 0.0 && t <= 1.0) {
            return Err(DatasetError::Options(format!("{name} must lie in (0, 1], got {t}")));
        }
    }

    let records: Vec<&PatientRecord> = studies.iter().flat_map(|s| s.records.iter()).collect();
    let records_in = records.len();
    let missing = |r: &PatientRecord, name: &str| r.covariates.get(name).is_none_or(CovariateValue::is_missing);

    let mut missing_count: BTreeMap<&str, usize> = BTreeMap::new();
    let mut missing_fraction = IndexMap::new();
    for spec in schema {
        let count = records.iter().filter(|r| missing(r, &spec.name)).count();
        missing_count.insert(spec.name.as_str(), count);
        let frac = match options.missingness_scope {
            MissingnessScope::Pooled => {
                if records_in == 0 {
                    0.0
                } else {
                    count as f64 / records_in as f64
                }
            }
            MissingnessScope::PerStudy => studies
                .iter()
                .filter(|s| !s.records.is_empty())
                .map(|s| {
                    s.records.iter().filter(|r| missing(r, &spec.name)).count() as f64 / s.records.len() as f64
                })
                .fold(0.0, f64::max),
        };
        missing_fraction.insert(spec.name.clone(), frac);
    }

    let mut dropped = Vec::new();
    let mut retained: Vec<&CovariateSpec> = Vec::new();
    for spec in schema {
        let frac = missing_fraction[&spec.name];
        if frac > options.missing_threshold {
            dropped.push(DroppedCovariate {
                name: spec.name.clone(),
                reason: DropReason::Missingness,
                detail: format!("missing fraction {frac:.4} exceeds {}", options.missing_threshold),
            });
        } else {
            retained.push(spec);
        }
    }

    // Value-level transforms and merges; row independent so they commute with row filtering.
    let mut processed: Vec<BTreeMap<String, CovariateValue>> = Vec::with_capacity(records_in);
    for rec in &records {
        let mut row = BTreeMap::new();
        for spec in &retained {
            let v = rec.covariates.get(&spec.name).cloned().unwrap_or(CovariateValue::Missing);
            let v = match (spec.kind, v) {
                (CovariateKind::Continuous, CovariateValue::Number(x)) => match spec.transform.apply(x) {
                    Some(y) => CovariateValue::Number(y),
                    None => return Err(DatasetError::TransformDomain { covariate: spec.name.clone(), value: x }),
                },
                (CovariateKind::Categorical, CovariateValue::Label(l)) => match spec.resolve_label(&l) {
                    Some(m) => CovariateValue::Label(m.to_string()),
                    None => {
                        return Err(DatasetError::Schema(format!(
                            "covariate '{}': unknown level '{l}'",
                            spec.name
                        )))
                    }
                },
                (CovariateKind::Continuous, CovariateValue::Label(l)) => {
                    return Err(DatasetError::Schema(format!(
                        "covariate '{}' is continuous but holds label '{l}'",
                        spec.name
                    )))
                }
                (CovariateKind::Categorical, CovariateValue::Number(x)) => {
                    return Err(DatasetError::Schema(format!(
                        "covariate '{}' is categorical but holds number {x}",
                        spec.name
                    )))
                }
                (_, CovariateValue::Missing) => CovariateValue::Missing,
            };
            row.insert(spec.name.clone(), v);
        }
        processed.push(row);
    }

    // Screening runs on the complete cases of whatever is still retained; every drop changes
    // the complete-case set, so iterate to a fixed point.
    let mut alive: BTreeSet<String> = retained.iter().map(|s| s.name.clone()).collect();
    let order: BTreeMap<&str, usize> = schema.iter().enumerate().map(|(i, s)| (s.name.as_str(), i)).collect();
    loop {
        let cc: Vec<usize> = (0..records_in)
            .filter(|&i| alive.iter().all(|n| !processed[i][n].is_missing()))
            .collect();

        let constant: Vec<String> = retained
            .iter()
            .filter(|s| alive.contains(&s.name))
            .filter(|s| {
                let distinct: BTreeSet<String> = cc
                    .iter()
                    .map(|&i| match &processed[i][&s.name] {
                        CovariateValue::Number(x) => format!("{:?}", x.to_bits()),
                        CovariateValue::Label(l) => l.clone(),
                        CovariateValue::Missing => unreachable!("complete case"),
                    })
                    .collect();
                distinct.len() < 2
            })
            .map(|s| s.name.clone())
            .collect();
        if !constant.is_empty() {
            for name in constant {
                alive.remove(&name);
                dropped.push(DroppedCovariate {
                    name,
                    reason: DropReason::ZeroVariance,
                    detail: format!("constant over {} complete cases", cc.len()),
                });
            }
            continue;
        }

        let continuous: Vec<&CovariateSpec> = retained
            .iter()
            .copied()
            .filter(|s| s.kind == CovariateKind::Continuous && alive.contains(&s.name))
            .collect();
        let columns: Vec<Vec<f64>> = continuous
            .iter()
            .map(|s| cc.iter().map(|&i| processed[i][&s.name].as_number().unwrap_or(f64::NAN)).collect())
            .collect();
        let mut pairs = Vec::new();
        for a in 0..continuous.len() {
            for b in (a + 1)..continuous.len() {
                let r = pearson(&columns[a], &columns[b]);
                if r.abs() > options.corr_threshold {
                    pairs.push((a, b, r));
                }
            }
        }
        if pairs.is_empty() {
            break;
        }
        pairs.sort_by(|x, y| y.2.abs().total_cmp(&x.2.abs()).then((x.0, x.1).cmp(&(y.0, y.1))));
        for (a, b, r) in pairs {
            let (sa, sb) = (continuous[a], continuous[b]);
            if !alive.contains(&sa.name) || !alive.contains(&sb.name) {
                continue;
            }
            let (keep, lose) = retention(sa, sb, &missing_count, &order);
            alive.remove(&lose.name);
            dropped.push(DroppedCovariate {
                name: lose.name.clone(),
                reason: DropReason::Correlation,
                detail: format!("|r| = {:.4} with '{}' exceeds {}", r.abs(), keep.name, options.corr_threshold),
            });
        }
    }

    let cc: Vec<bool> = (0..records_in)
        .map(|i| alive.iter().all(|n| !processed[i][n].is_missing()))
        .collect();

    let mut notes = Vec::new();
    let mut out = Vec::new();
    let mut idx = 0;
    for study in studies {
        let mut kept = Vec::new();
        for rec in &study.records {
            if cc[idx] {
                let covariates = processed[idx]
                    .iter()
                    .filter(|(k, _)| alive.contains(*k))
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect();
                kept.push(PatientRecord {
                    study_id: rec.study_id.clone(),
                    treatment: rec.treatment.clone(),
                    outcome: rec.outcome,
                    covariates,
                });
            }
            idx += 1;
        }
        if kept.is_empty() {
            if !study.records.is_empty() {
                notes.push(format!("study '{}' has no complete cases and was removed", study.study_id));
            }
            continue;
        }
        let baseline_treatment = baseline_for(&kept, registry).unwrap_or_default();
        if baseline_treatment != study.baseline_treatment {
            notes.push(format!(
                "study '{}': baseline arm '{}' has no complete cases, using '{}'",
                study.study_id, study.baseline_treatment, baseline_treatment
            ));
        }
        out.push(StudyDataset { study_id: study.study_id.clone(), records: kept, baseline_treatment, center: None });
    }

    let mut retained_specs = Vec::new();
    for spec in retained.iter().filter(|s| alive.contains(&s.name)) {
        let mut spec = (*spec).clone();
        if spec.kind == CovariateKind::Categorical {
            let observed: BTreeSet<&str> = out
                .iter()
                .flat_map(|s| s.records.iter())
                .filter_map(|r| match &r.covariates[&spec.name] {
                    CovariateValue::Label(l) => Some(l.as_str()),
                    _ => None,
                })
                .collect();
            let narrowed: Vec<String> =
                spec.categories.iter().filter(|c| observed.contains(c.as_str())).cloned().collect();
            if narrowed.len() != spec.categories.len() {
                notes.push(format!(
                    "covariate '{}': unobserved levels removed: {}",
                    spec.name,
                    spec.categories.iter().filter(|c| !narrowed.contains(c)).cloned().collect::<Vec<_>>().join(", ")
                ));
            }
            let reference = spec.reference_level.clone().unwrap_or_default();
            if !narrowed.contains(&reference) {
                notes.push(format!(
                    "covariate '{}': reference '{}' unobserved, using '{}'",
                    spec.name, reference, narrowed[0]
                ));
                spec.reference_level = Some(narrowed[0].clone());
            }
            spec.merge_map.retain(|_, to| narrowed.contains(to));
            spec.categories = narrowed;
        }
        retained_specs.push(spec);
    }

    let report = PreprocessReport {
        options: *options,
        records_in,
        records_out: out.iter().map(|s| s.records.len()).sum(),
        missing_fraction,
        dropped,
        retained: retained_specs,
        notes,
    };
    Ok((out, report))
}

/// Keep the member with fewer missing values, unless a manual preference says otherwise;
/// ties go to the earlier schema entry.
fn retention<'a>(
    a: &'a CovariateSpec,
    b: &'a CovariateSpec,
    missing: &BTreeMap<&str, usize>,
    order: &BTreeMap<&str, usize>,
) -> (&'a CovariateSpec, &'a CovariateSpec) {
    let a_over_b = a.prefer_over.contains(&b.name);
    let b_over_a = b.prefer_over.contains(&a.name);
    if a_over_b && !b_over_a {
        return (a, b);
    }
    if b_over_a && !a_over_b {
        return (b, a);
    }
    let key = |s: &CovariateSpec| (missing[s.name.as_str()], order[s.name.as_str()]);
    if key(a) <= key(b) {
        (a, b)
    } else {
        (b, a)
    }
}
