//! Reference computations for integration tests, written independently of
//! the library's own numerics.

#![allow(dead_code)]

use annoqual_core::mm::{MixtureDraw, NiwHyper};
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

pub fn matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows.len(), |i, j| rows[i][j])
}

/// `ln N(u; mean, cov)` through nalgebra's Cholesky factorization.
pub fn ln_gaussian(u: &[f64], mean: &[f64], cov: &DMatrix<f64>) -> f64 {
    let d = u.len();
    let chol = cov.clone().cholesky().expect("covariance is positive definite");
    let diff = DVector::from_column_slice(u) - DVector::from_column_slice(mean);
    let solved = chol.solve(&diff);
    let maha = diff.dot(&solved);
    let ln_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + ln_det + maha)
}

pub fn ln_mixture(u: &[f64], mix: &MixtureDraw) -> f64 {
    let terms: Vec<f64> = (0..mix.weights.len())
        .map(|k| mix.weights[k].ln() + ln_gaussian(u, &mix.means[k], &matrix(&mix.covariances[k])))
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Bayes posterior over classes for known class mixtures and priors.
pub fn bayes_posterior(u: &[f64], classes: &[MixtureDraw], priors: &[f64]) -> Vec<f64> {
    let scores: Vec<f64> = classes.iter().zip(priors).map(|(c, p)| p.ln() + ln_mixture(u, c)).collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Equal-width, right-closed bins; `p = 0` lands in the first bin.
pub fn ece(probs: &[f64], gold: &[bool], bins: usize) -> f64 {
    let mut sum_p = vec![0.0; bins];
    let mut hits = vec![0.0; bins];
    let mut count = vec![0.0; bins];
    for (&p, &y) in probs.iter().zip(gold) {
        let mut b = 0;
        while b + 1 < bins && p > (b + 1) as f64 / bins as f64 + 1e-12 {
            b += 1;
        }
        sum_p[b] += p;
        hits[b] += f64::from(u8::from(y));
        count[b] += 1.0;
    }
    let n = probs.len() as f64;
    (0..bins)
        .filter(|&b| count[b] > 0.0)
        .map(|b| count[b] / n * (sum_p[b] / count[b] - hits[b] / count[b]).abs())
        .sum()
}

/// Binary F1 for `positive`.
pub fn f1(pred: &[usize], gold: &[usize], positive: usize) -> f64 {
    let tp = pred.iter().zip(gold).filter(|(p, g)| **p == positive && **g == positive).count() as f64;
    let fp = pred.iter().zip(gold).filter(|(p, g)| **p == positive && **g != positive).count() as f64;
    let fn_ = pred.iter().zip(gold).filter(|(p, g)| **p != positive && **g == positive).count() as f64;
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

/// Conjugate NIW update, computed directly from the points.
pub fn niw_posterior(prior: &NiwHyper, points: &[Vec<f64>]) -> (DVector<f64>, f64, f64, DMatrix<f64>) {
    let d = prior.mean.len();
    let n = points.len() as f64;
    let xbar = points.iter().fold(DVector::zeros(d), |acc, p| acc + DVector::from_column_slice(p)) / n;
    let scatter = points.iter().fold(DMatrix::zeros(d, d), |acc, p| {
        let c = DVector::from_column_slice(p) - &xbar;
        acc + &c * c.transpose()
    });
    let m0 = DVector::from_column_slice(&prior.mean);
    let kappa = prior.kappa + n;
    let nu = prior.nu + n;
    let mean = (&m0 * prior.kappa + &xbar * n) / kappa;
    let diff = &xbar - &m0;
    let psi = matrix(&prior.scale) + scatter + &diff * diff.transpose() * (prior.kappa * n / kappa);
    (mean, kappa, nu, psi)
}

/// Whether `x` lies in the central `level` region of the NIW marginal of the
/// mean, a multivariate t with `nu - d + 1` degrees of freedom.
pub fn in_mean_credible_region(
    x: &[f64],
    (mean, kappa, nu, psi): &(DVector<f64>, f64, f64, DMatrix<f64>),
    level: f64,
) -> bool {
    let d = mean.len() as f64;
    let dof = nu - d + 1.0;
    let shape = psi / (kappa * dof);
    let diff = DVector::from_column_slice(x) - mean;
    let maha = diff.dot(&shape.cholesky().expect("shape is positive definite").solve(&diff));
    let f = FisherSnedecor::new(d, dof).expect("valid degrees of freedom");
    maha / d <= f.inverse_cdf(level)
}
