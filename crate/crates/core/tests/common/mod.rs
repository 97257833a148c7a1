#![allow(dead_code)]

use htenmr::risk::DesignMatrix;
use htenmr::scalar::expit;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Logistic data with normal covariates; `beta[k]` is the true slope of column `k`.
pub fn logistic_design(seed: u64, n: usize, beta: &[f64], intercept: f64) -> DesignMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = beta.len();
    let cols: Vec<Vec<f64>> = (0..p).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let y: Vec<bool> = (0..n)
        .map(|i| {
            let eta = intercept + (0..p).map(|k| beta[k] * cols[k][i]).sum::<f64>();
            rng.random::<f64>() < expit(eta)
        })
        .collect();
    let names = (1..=p).map(|k| format!("x{k}")).collect();
    DesignMatrix::from_columns(names, cols, &y).unwrap()
}

/// Score of the unpenalized log-likelihood on the original scale, intercept first.
pub fn score(design: &DesignMatrix<f64>, intercept: f64, beta: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; beta.len() + 1];
    for i in 0..design.n() {
        let eta = intercept + (0..beta.len()).map(|k| beta[k] * design.column(k)[i]).sum::<f64>();
        let r = design.y()[i] - expit(eta);
        g[0] += r;
        for k in 0..beta.len() {
            g[k + 1] += r * design.column(k)[i];
        }
    }
    g
}
