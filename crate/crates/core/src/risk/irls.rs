use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{DesignMatrix, FitError, FitMethod, Result, RiskModel};
use crate::linalg::{Cholesky, SquareMatrix};
use crate::scalar::{expit, logit, softplus, CompensatedSum, Scalar};

/// Penalties tried when no grid is supplied.
pub const DEFAULT_PENALTY_GRID: [f64; 9] = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];

#[derive(Debug, Clone, Copy)]
pub struct IrlsOptions<T> {
    /// Convergence threshold on the largest absolute score component; defaults to
    /// [`Scalar::score_tolerance`].
    pub tol: Option<T>,
    pub max_iter: usize,
    /// Standardized slope magnitude treated as divergence.
    pub separation_bound: T,
}

impl<T: Scalar> Default for IrlsOptions<T> {
    fn default() -> Self {
        Self { tol: None, max_iter: 200, separation_bound: T::lit(50.0) }
    }
}

/// Result of a (ridge-)penalized IRLS fit on the standardized scale.
#[derive(Debug, Clone)]
pub struct IrlsFit<T> {
    pub intercept_std: T,
    /// One entry per design column; inactive columns hold zero.
    pub beta_std: Vec<T>,
    pub log_likelihood: T,
    pub penalized_log_likelihood: T,
    pub iterations: usize,
    /// Penalized log-likelihood after every accepted step, starting from the initial point.
    pub trace: Vec<T>,
    /// Active design columns, in order; row/column 0 of the matrices is the intercept.
    pub active: Vec<usize>,
    /// Unpenalized information `XᵀWX` at the optimum.
    pub information: SquareMatrix<T>,
    /// Inverse of the penalized information.
    pub covariance: SquareMatrix<T>,
    /// `trace(I (I + P)⁻¹)` excluding the intercept.
    pub effective_df: T,
}

struct Workspace<'a, T> {
    cols: Vec<&'a [T]>,
    y: &'a [T],
}

impl<T: Scalar> Workspace<'_, T> {
    fn eta(&self, beta: &[T]) -> Vec<T> {
        let mut eta = vec![beta[0]; self.y.len()];
        for (col, &b) in self.cols.iter().zip(&beta[1..]) {
            for (e, &x) in eta.iter_mut().zip(col.iter()) {
                *e = *e + b * x;
            }
        }
        eta
    }

    fn penalized(&self, beta: &[T], ridge: T) -> (T, T) {
        let mut acc = CompensatedSum::default();
        for (&y, e) in self.y.iter().zip(self.eta(beta)) {
            acc.add(y * e - softplus(e));
        }
        let ll = acc.value();
        let pen = beta[1..].iter().map(|&b| b * b).sum::<T>() * ridge / T::lit(2.0);
        (ll, ll - pen)
    }

    /// Score vector and information `XᵀWX` at `beta`.
    fn score_info(&self, beta: &[T]) -> (Vec<T>, SquareMatrix<T>) {
        let q = beta.len();
        let eta = self.eta(beta);
        let mut score = vec![CompensatedSum::default(); q];
        let mut info = SquareMatrix::zeros(q);
        let mut xi = vec![T::zero(); q];
        for i in 0..self.y.len() {
            let p = expit(eta[i]);
            let w = p * (T::one() - p);
            let r = self.y[i] - p;
            xi[0] = T::one();
            for (k, col) in self.cols.iter().enumerate() {
                xi[k + 1] = col[i];
            }
            for a in 0..q {
                score[a].add(xi[a] * r);
                let wa = w * xi[a];
                for b in 0..=a {
                    info.add(a, b, wa * xi[b]);
                }
            }
        }
        for a in 0..q {
            for b in 0..a {
                info.set(b, a, info.get(a, b));
            }
        }
        (score.iter().map(CompensatedSum::value).collect(), info)
    }
}

/// Newton-Raphson / IRLS with step halving, maximizing `logL − (ridge/2)·Σ β_std²`.
/// The intercept is never penalized.
pub fn irls<T: Scalar>(design: &DesignMatrix<T>, ridge: T, opts: &IrlsOptions<T>) -> Result<IrlsFit<T>> {
    design.check_both_classes()?;
    if ridge < T::zero() || !ridge.is_finite() {
        return Err(FitError::Argument(format!("penalty must be a non-negative number, got {ridge}")));
    }
    let active: Vec<usize> = (0..design.p()).filter(|&k| design.is_active(k)).collect();
    let ws = Workspace { cols: active.iter().map(|&k| design.standardized(k)).collect(), y: design.y() };
    let q = active.len() + 1;
    let tol = opts.tol.unwrap_or_else(|| T::score_tolerance(design.n()));
    let ybar = T::from_count(design.events()) / T::from_count(design.n());

    let mut beta = vec![T::zero(); q];
    beta[0] = logit(ybar);
    let (_, mut current) = ws.penalized(&beta, ridge);
    let mut trace = vec![current];
    let mut iterations = 0;
    let diverged = |beta: &[T]| -> Option<String> {
        beta[1..]
            .iter()
            .position(|b| b.abs() > opts.separation_bound || !b.is_finite())
            .map(|k| design.names()[active[k]].clone())
    };

    loop {
        let (mut score, mut info) = ws.score_info(&beta);
        for a in 1..q {
            score[a] = score[a] - ridge * beta[a];
        }
        let max_score = score.iter().fold(T::zero(), |m, s| m.max(s.abs()));
        if max_score < tol {
            break;
        }
        if iterations >= opts.max_iter {
            return Err(FitError::NonConvergence(iterations));
        }
        iterations += 1;
        for a in 1..q {
            info.add(a, a, ridge);
        }
        let chol = match Cholesky::new(&info) {
            Some(c) => c,
            None => {
                let largest = beta[1..].iter().fold(T::zero(), |m, b| m.max(b.abs()));
                return Err(match diverged(&beta) {
                    Some(column) => FitError::Separation { column },
                    None if largest > T::lit(10.0) => FitError::Separation {
                        column: beta[1..]
                            .iter()
                            .enumerate()
                            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                            .map(|(k, _)| design.names()[active[k]].clone())
                            .unwrap_or_default(),
                    },
                    None => FitError::Singular,
                });
            }
        };
        let step = chol.solve(&score);
        let negligible = beta
            .iter()
            .zip(&step)
            .all(|(&b, &s)| s.abs() <= T::epsilon() * T::lit(64.0) * (T::one() + b.abs()));
        if negligible {
            // Score is at the rounding floor of the sums.
            break;
        }
        let slack = T::epsilon() * T::lit(100.0) * current.abs().max(T::one());
        let mut t = T::one();
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<T> = beta.iter().zip(&step).map(|(&b, &s)| b + t * s).collect();
            let (_, pll) = ws.penalized(&cand, ridge);
            if pll.is_finite() && pll >= current - slack {
                accepted = Some((cand, pll));
                break;
            }
            t = t / T::lit(2.0);
        }
        match accepted {
            Some((cand, pll)) => {
                // Never record a decrease caused by rounding.
                current = pll.max(current);
                beta = cand;
                trace.push(current);
            }
            // No ascent direction left at working precision.
            None => break,
        }
        if let Some(column) = diverged(&beta) {
            return Err(FitError::Separation { column });
        }
    }

    let (ll, pll) = ws.penalized(&beta, ridge);
    let (_, information) = ws.score_info(&beta);
    let mut penalized_info = information.clone();
    for a in 1..q {
        penalized_info.add(a, a, ridge);
    }
    let chol = Cholesky::new(&penalized_info).ok_or(FitError::Singular)?;
    let covariance = chol.inverse();
    let effective_df = information.mul(&covariance).trace() - T::one();

    let mut beta_std = vec![T::zero(); design.p()];
    for (j, &k) in active.iter().enumerate() {
        beta_std[k] = beta[j + 1];
    }
    Ok(IrlsFit {
        intercept_std: beta[0],
        beta_std,
        log_likelihood: ll,
        penalized_log_likelihood: pll,
        iterations,
        trace,
        active,
        information,
        covariance,
        effective_df,
    })
}

/// Standard errors on the original scale from the standardized-scale covariance.
fn original_scale_errors<T: Scalar>(design: &DesignMatrix<T>, fit: &IrlsFit<T>) -> IndexMap<String, T> {
    let q = fit.active.len() + 1;
    // Original intercept = β0 − Σ β_k m_k / s_k: gradient (1, −m_k/s_k).
    let mut grad = vec![T::one(); q];
    for (j, &k) in fit.active.iter().enumerate() {
        grad[j + 1] = -design.means()[k] / design.sds()[k];
    }
    let mut var0 = T::zero();
    for a in 0..q {
        for b in 0..q {
            var0 = var0 + grad[a] * fit.covariance.get(a, b) * grad[b];
        }
    }
    let mut out = IndexMap::new();
    out.insert("(intercept)".to_string(), var0.max(T::zero()).sqrt());
    for (k, name) in design.names().iter().enumerate() {
        let se = match fit.active.iter().position(|&a| a == k) {
            Some(j) => fit.covariance.get(j + 1, j + 1).max(T::zero()).sqrt() / design.sds()[k],
            None => T::zero(),
        };
        out.insert(name.clone(), se);
    }
    out
}

fn model_from_fit<T: Scalar>(method: FitMethod, design: &DesignMatrix<T>, fit: &IrlsFit<T>) -> RiskModel<T> {
    let mut model = RiskModel::assemble(method, design, fit.intercept_std, &fit.beta_std);
    model.standard_errors = Some(original_scale_errors(design, fit));
    model
}

/// Unpenalized maximum likelihood.
pub fn fit_mle<T: Scalar>(design: &DesignMatrix<T>) -> Result<RiskModel<T>> {
    let active = (0..design.p()).filter(|&k| design.is_active(k)).count();
    if design.n() <= active + 1 {
        return Err(FitError::TooFewObservations { n: design.n(), p: active + 1 });
    }
    let fit = irls(design, T::zero(), &IrlsOptions::default())?;
    Ok(model_from_fit(FitMethod::Mle, design, &fit))
}

/// One point of a penalty search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyPoint<T> {
    pub penalty: T,
    pub effective_df: T,
    pub log_likelihood: T,
    /// Likelihood-ratio χ² of the penalized fit against the intercept-only model.
    pub lr_chi2: T,
    /// `lr_chi2 − 2·effective_df`.
    pub modified_aic: T,
}

/// Ridge-penalized fit at a single penalty.
pub fn fit_penalized<T: Scalar>(design: &DesignMatrix<T>, penalty: T) -> Result<(RiskModel<T>, PenaltyPoint<T>)> {
    let fit = irls(design, penalty, &IrlsOptions::default())?;
    let lr_chi2 = T::lit(2.0) * (fit.log_likelihood - design.null_log_likelihood());
    let point = PenaltyPoint {
        penalty,
        effective_df: fit.effective_df,
        log_likelihood: fit.log_likelihood,
        lr_chi2,
        modified_aic: lr_chi2 - T::lit(2.0) * fit.effective_df,
    };
    let mut model = model_from_fit(FitMethod::PenalizedMle, design, &fit);
    model.lambda = Some(penalty);
    model.effective_df = Some(fit.effective_df);
    Ok((model, point))
}

/// Fits every penalty in `grid` and keeps the one maximizing the modified AIC
/// (earliest grid entry on ties).
pub fn fit_penalized_mle<T: Scalar>(design: &DesignMatrix<T>, grid: &[T]) -> Result<RiskModel<T>> {
    if grid.is_empty() {
        return Err(FitError::Argument("empty penalty grid".into()));
    }
    let mut best: Option<RiskModel<T>> = None;
    let mut best_aic = T::neg_infinity();
    let mut trace = Vec::with_capacity(grid.len());
    for &penalty in grid {
        let (model, point) = fit_penalized(design, penalty)?;
        if point.modified_aic > best_aic {
            best_aic = point.modified_aic;
            best = Some(model);
        }
        trace.push(point);
    }
    let mut model = best.expect("non-empty grid");
    model.penalty_trace = Some(trace);
    Ok(model)
}
