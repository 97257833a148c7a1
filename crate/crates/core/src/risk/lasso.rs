use super::{DesignMatrix, FitError, FitMethod, Result, RiskModel};
use crate::scalar::{expit, logit, softplus, Scalar};

#[derive(Debug, Clone, Copy)]
pub struct LassoOptions<T> {
    /// Target for the largest KKT violation at every path point.
    pub kkt_tol: T,
    pub max_outer: usize,
    pub max_sweeps: usize,
}

impl<T: Scalar> Default for LassoOptions<T> {
    fn default() -> Self {
        let kkt_tol = T::lit(1e-9).max(T::epsilon().sqrt() * T::lit(4.0));
        Self { kkt_tol, max_outer: 100, max_sweeps: 10_000 }
    }
}

/// Solution at one penalty value, on the standardized scale.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoPoint<T> {
    pub lambda: T,
    pub intercept_std: T,
    pub beta_std: Vec<T>,
    pub kkt_violation: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoPath<T> {
    pub points: Vec<LassoPoint<T>>,
}

impl<T: Scalar> LassoPath<T> {
    pub fn model(&self, design: &DesignMatrix<T>, index: usize) -> RiskModel<T> {
        let pt = &self.points[index];
        let mut model = RiskModel::assemble(FitMethod::Lasso, design, pt.intercept_std, &pt.beta_std);
        model.lambda = Some(pt.lambda);
        model
    }

    /// Original-scale coefficients `(intercept, slopes)` at every path point.
    pub fn coefficients(&self, design: &DesignMatrix<T>) -> Vec<(T, Vec<T>)> {
        self.points.iter().map(|p| design.unstandardize(p.intercept_std, &p.beta_std)).collect()
    }
}

fn mean_gradient<T: Scalar>(design: &DesignMatrix<T>, k: usize, resid: &[T]) -> T {
    let x = design.standardized(k);
    x.iter().zip(resid).map(|(&a, &b)| a * b).sum::<T>() / T::from_count(design.n())
}

/// Smallest penalty at which every slope is zero.
pub fn lambda_max<T: Scalar>(design: &DesignMatrix<T>) -> T {
    let ybar = T::from_count(design.events()) / T::from_count(design.n().max(1));
    let resid: Vec<T> = design.y().iter().map(|&y| y - ybar).collect();
    (0..design.p())
        .filter(|&k| design.is_active(k))
        .map(|k| mean_gradient(design, k, &resid).abs())
        .fold(T::zero(), T::max)
}

/// `count` log-spaced values from `lambda_max` down to `lambda_max · ratio`.
pub fn lambda_grid<T: Scalar>(lambda_max: T, count: usize, ratio: T) -> Vec<T> {
    if count == 1 {
        return vec![lambda_max];
    }
    let step = ratio.ln() / T::from_count(count - 1);
    (0..count).map(|i| lambda_max * (step * T::from_count(i)).exp()).collect()
}

/// Largest violation of the lasso optimality conditions at a path point, standardized scale:
/// zero slopes need `|g_k| ≤ λ`, non-zero slopes need `g_k = λ·sign(β_k)`, and the
/// intercept gradient must vanish. `g_k = xₖᵀ(y − p̂)/n`.
pub fn kkt_violation<T: Scalar>(design: &DesignMatrix<T>, point: &LassoPoint<T>) -> T {
    let eta = design.eta_std(point.intercept_std, &point.beta_std);
    kkt_from_eta(design, point.lambda, &point.beta_std, &eta)
}

fn kkt_from_eta<T: Scalar>(design: &DesignMatrix<T>, lambda: T, beta: &[T], eta: &[T]) -> T {
    let resid: Vec<T> = design.y().iter().zip(eta).map(|(&y, &e)| y - expit(e)).collect();
    let n = T::from_count(design.n());
    let mut worst = (resid.iter().copied().sum::<T>() / n).abs();
    for k in (0..design.p()).filter(|&k| design.is_active(k)) {
        let g = mean_gradient(design, k, &resid);
        let b = beta[k];
        let v = if b == T::zero() {
            (g.abs() - lambda).max(T::zero())
        } else {
            (g - lambda * b.signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Penalized objective together with the linear predictor it was evaluated at.
fn objective<T: Scalar>(design: &DesignMatrix<T>, lambda: T, b0: T, beta: &[T]) -> (T, Vec<T>) {
    let eta = design.eta_std(b0, beta);
    let nll: T = design.y().iter().zip(&eta).map(|(&y, &e)| softplus(e) - y * e).sum();
    (nll / T::from_count(design.n()) + lambda * beta.iter().map(|b| b.abs()).sum::<T>(), eta)
}

fn soft_threshold<T: Scalar>(z: T, gamma: T) -> T {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        T::zero()
    }
}

struct Solver<'a, T> {
    design: &'a DesignMatrix<T>,
    active_cols: Vec<usize>,
    opts: LassoOptions<T>,
}

impl<T: Scalar> Solver<'_, T> {
    /// Proximal Newton: quadratic approximation of the log-likelihood, solved by cyclic
    /// coordinate descent over an active set, with a backtracking line search on the
    /// true objective.
    fn solve(&self, lambda: T, b0: &mut T, beta: &mut [T]) -> Result<T> {
        let d = self.design;
        let n = d.n();
        let nt = T::from_count(n);
        let y = d.y();
        let (mut obj, mut eta) = objective(d, lambda, *b0, beta);
        let mut kkt = T::infinity();
        for _outer in 0..self.opts.max_outer {
            let mut w = Vec::with_capacity(n);
            let mut r = Vec::with_capacity(n);
            for i in 0..n {
                let p = expit(eta[i]);
                let wi = (p * (T::one() - p)).max(T::lit(1e-12));
                w.push(wi);
                // Working residual z − η.
                r.push((y[i] - p) / wi);
            }
            let wsum: T = w.iter().copied().sum();
            let xw: Vec<T> = (0..d.p())
                .map(|k| d.standardized(k).iter().zip(&w).map(|(&x, &wi)| wi * x * x).sum::<T>() / nt)
                .collect();

            let mut nb0 = *b0;
            let mut nbeta = beta.to_vec();
            let inner_tol = self.opts.kkt_tol * self.opts.kkt_tol * T::lit(1e-2);
            let mut sweeps = 0;
            let mut full = true;
            loop {
                sweeps += 1;
                let mut max_change = T::zero();
                let shift = r.iter().zip(&w).map(|(&ri, &wi)| wi * ri).sum::<T>() / wsum;
                if shift != T::zero() {
                    nb0 = nb0 + shift;
                    r.iter_mut().for_each(|ri| *ri = *ri - shift);
                    max_change = max_change.max(wsum / nt * shift * shift);
                }
                for &k in &self.active_cols {
                    if !full && nbeta[k] == T::zero() {
                        continue;
                    }
                    let x = d.standardized(k);
                    let g = x.iter().zip(&r).zip(&w).map(|((&xi, &ri), &wi)| wi * xi * ri).sum::<T>() / nt
                        + xw[k] * nbeta[k];
                    let new = soft_threshold(g, lambda) / xw[k];
                    let delta = new - nbeta[k];
                    if delta != T::zero() {
                        for (ri, &xi) in r.iter_mut().zip(x) {
                            *ri = *ri - delta * xi;
                        }
                        nbeta[k] = new;
                        max_change = max_change.max(xw[k] * delta * delta);
                    }
                }
                if max_change < inner_tol {
                    if full {
                        break;
                    }
                    // Converged on the active set; confirm with a sweep over everything.
                    full = true;
                } else {
                    full = false;
                }
                if sweeps > self.opts.max_sweeps {
                    return Err(FitError::NonConvergence(sweeps));
                }
            }

            // Backtrack along the Newton direction.
            let mut t = T::one();
            let slack = T::epsilon() * T::lit(16.0) * obj.abs().max(T::one());
            let mut accepted = false;
            for _ in 0..40 {
                let cb0 = *b0 + t * (nb0 - *b0);
                let cbeta: Vec<T> = beta.iter().zip(&nbeta).map(|(&o, &c)| o + t * (c - o)).collect();
                let (cobj, ceta) = objective(d, lambda, cb0, &cbeta);
                if cobj <= obj + slack {
                    *b0 = cb0;
                    eta = ceta;
                    beta.copy_from_slice(&cbeta);
                    obj = cobj.min(obj);
                    accepted = true;
                    break;
                }
                t = t / T::lit(2.0);
            }
            kkt = kkt_from_eta(d, lambda, beta, &eta);
            if kkt <= self.opts.kkt_tol || !accepted {
                return Ok(kkt);
            }
        }
        Ok(kkt)
    }
}

/// LASSO path over `lambdas` (use a decreasing sequence for warm starts), minimizing
/// `(1/n)·NLL + λ·Σ|β_k|` on standardized columns with an unpenalized intercept.
pub fn fit_lasso<T: Scalar>(design: &DesignMatrix<T>, lambdas: &[T]) -> Result<LassoPath<T>> {
    fit_lasso_with(design, lambdas, &LassoOptions::default())
}

pub fn fit_lasso_with<T: Scalar>(
    design: &DesignMatrix<T>,
    lambdas: &[T],
    opts: &LassoOptions<T>,
) -> Result<LassoPath<T>> {
    design.check_both_classes()?;
    if let Some(bad) = lambdas.iter().find(|l| !(**l >= T::zero()) || !l.is_finite()) {
        return Err(FitError::Argument(format!("penalty must be a non-negative number, got {bad}")));
    }
    let lmax = lambda_max(design);
    let ybar = T::from_count(design.events()) / T::from_count(design.n());
    let solver = Solver {
        design,
        active_cols: (0..design.p()).filter(|&k| design.is_active(k)).collect(),
        opts: *opts,
    };
    let mut b0 = logit(ybar);
    let mut beta = vec![T::zero(); design.p()];
    let mut points = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        if lambda >= lmax {
            // The null model satisfies the optimality conditions exactly.
            b0 = logit(ybar);
            beta.iter_mut().for_each(|b| *b = T::zero());
            let mut pt = LassoPoint { lambda, intercept_std: b0, beta_std: beta.clone(), kkt_violation: T::zero() };
            pt.kkt_violation = kkt_violation(design, &pt);
            points.push(pt);
            continue;
        }
        let kkt = solver.solve(lambda, &mut b0, &mut beta)?;
        points.push(LassoPoint { lambda, intercept_std: b0, beta_std: beta.clone(), kkt_violation: kkt });
    }
    Ok(LassoPath { points })
}
