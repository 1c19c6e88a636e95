//! Multivariate normal and normal-mixture log densities via Cholesky factors.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::MmError;

/// Lower Cholesky factor of a symmetric matrix, row-major. `None` unless every
/// pivot is strictly positive and finite.
pub(crate) fn cholesky_lower(a: &DMatrix<f64>) -> Option<Vec<f64>> {
    let d = a.nrows();
    if a.ncols() != d {
        return None;
    }
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// A normal distribution with a pre-factored covariance.
#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: Vec<f64>,
    chol: Vec<f64>,
    log_norm: f64,
}

impl Gaussian {
    pub fn new(mean: &[f64], cov: &DMatrix<f64>) -> Result<Self, MmError> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(MmError::DimensionMismatch {
                expected: d,
                found: cov.nrows(),
            });
        }
        let chol = cholesky_lower(cov).ok_or(MmError::NotPositiveDefinite)?;
        let log_det_half: f64 = (0..d).map(|i| chol[i * d + i].ln()).sum();
        Ok(Self {
            mean: mean.to_vec(),
            chol,
            log_norm: -0.5 * d as f64 * (2.0 * PI).ln() - log_det_half,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        debug_assert_eq!(x.len(), d);
        // Solve L z = x - mean by forward substitution; |z|^2 is the Mahalanobis term.
        let mut z = [0.0f64; 16];
        let mut heap;
        let z: &mut [f64] = if d <= 16 {
            &mut z[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut quad = 0.0;
        for i in 0..d {
            let row = &self.chol[i * d..i * d + i];
            let mut s = x[i] - self.mean[i];
            for (lij, zj) in row.iter().zip(z.iter()) {
                s -= lij * zj;
            }
            let zi = s / self.chol[i * d + i];
            z[i] = zi;
            quad += zi * zi;
        }
        self.log_norm - 0.5 * quad
    }
}

/// Weighted mixture of [`Gaussian`]s.
#[derive(Debug, Clone)]
pub struct Mixture {
    ln_weights: Vec<f64>,
    components: Vec<Gaussian>,
}

impl Mixture {
    pub fn new(weights: &[f64], components: Vec<Gaussian>) -> Result<Self, MmError> {
        if weights.len() != components.len() || components.is_empty() {
            return Err(MmError::InvalidConfig(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        let d = components[0].dim();
        if let Some(c) = components.iter().find(|c| c.dim() != d) {
            return Err(MmError::DimensionMismatch {
                expected: d,
                found: c.dim(),
            });
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || !(total > 0.0) {
            return Err(MmError::InvalidConfig("mixture weights must be non-negative".into()));
        }
        Ok(Self {
            ln_weights: weights.iter().map(|w| (w / total).ln()).collect(),
            components,
        })
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        if self.components.len() == 1 {
            return self.components[0].ln_pdf(x);
        }
        let terms: Vec<f64> = self
            .ln_weights
            .iter()
            .zip(&self.components)
            .map(|(lw, c)| lw + c.ln_pdf(x))
            .collect();
        log_sum_exp(&terms)
    }
}

/// `sum_k w_k N(u; mu_k, Sigma_k + ridge I)`, evaluated in log space.
pub fn mvn_mixture_density(
    u: &[f64],
    weights: &[f64],
    means: &[Vec<f64>],
    covariances: &[DMatrix<f64>],
    ridge: f64,
) -> Result<f64, MmError> {
    if means.len() != covariances.len() {
        return Err(MmError::InvalidConfig(format!(
            "{} means for {} covariances",
            means.len(),
            covariances.len()
        )));
    }
    let components = means
        .iter()
        .zip(covariances)
        .map(|(mu, cov)| {
            if mu.len() != u.len() {
                return Err(MmError::DimensionMismatch {
                    expected: u.len(),
                    found: mu.len(),
                });
            }
            let mut c = cov.clone();
            for i in 0..c.nrows().min(c.ncols()) {
                c[(i, i)] += ridge;
            }
            Gaussian::new(mu, &c)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Mixture::new(weights, components)?.ln_pdf(u).exp())
}
