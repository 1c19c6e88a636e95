//! Blocked Gibbs sampler for a finite Gaussian mixture with a
//! normal-inverse-Wishart prior on each component and a symmetric Dirichlet
//! prior on the weights.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::density::{cholesky_lower, log_sum_exp, Gaussian};
use crate::error::MmError;

/// Resolved NIW hyperparameters for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiwHyper {
    pub mean: Vec<f64>,
    pub kappa: f64,
    pub nu: f64,
    pub scale: Vec<Vec<f64>>,
}

impl NiwHyper {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub(crate) fn scale_matrix(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.scale)
    }

    /// Conjugate update with `n` points of mean `xbar` and centred scatter `scatter`.
    pub fn posterior(&self, n: usize, xbar: &DVector<f64>, scatter: &DMatrix<f64>) -> NiwHyper {
        let m0 = DVector::from_column_slice(&self.mean);
        let nf = n as f64;
        let kappa = self.kappa + nf;
        let nu = self.nu + nf;
        if n == 0 {
            return self.clone();
        }
        let mean = (&m0 * self.kappa + xbar * nf) / kappa;
        let diff = xbar - &m0;
        let scale = self.scale_matrix() + scatter + (&diff * diff.transpose()) * (self.kappa * nf / kappa);
        NiwHyper {
            mean: mean.iter().copied().collect(),
            kappa,
            nu,
            scale: matrix_to_rows(&symmetrize(scale)),
        }
    }
}

/// One retained draw of a class's mixture parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureDraw {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
}

impl MixtureDraw {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn covariance(&self, k: usize) -> DMatrix<f64> {
        rows_to_matrix(&self.covariances[k])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub class: usize,
    /// Data log-likelihood after every sweep, burn-in included.
    pub log_likelihood: Vec<f64>,
    /// Average share of points assigned to each component over retained sweeps.
    pub occupancy: Vec<f64>,
}

pub(crate) struct ChainSettings {
    pub components: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub alpha0: f64,
    pub ridge: f64,
    pub class: usize,
}

pub(crate) struct ChainOutput {
    pub draws: Vec<MixtureDraw>,
    pub diagnostics: ChainDiagnostics,
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows.len();
    DMatrix::from_fn(d, d, |i, j| rows[i][j])
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn lower_from_flat(flat: &[f64], d: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(d, d, flat)
}

fn invert_spd(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let d = a.nrows();
    let l = lower_from_flat(&cholesky_lower(a)?, d);
    let l_inv = l.solve_lower_triangular(&DMatrix::identity(d, d))?;
    Some(symmetrize(l_inv.transpose() * l_inv))
}

/// `Sigma ~ IW(scale, nu)` via the Bartlett decomposition of its inverse.
pub(crate) fn sample_inverse_wishart<R: Rng + ?Sized>(
    scale: &DMatrix<f64>,
    nu: f64,
    rng: &mut R,
) -> Option<DMatrix<f64>> {
    let d = scale.nrows();
    let precision_scale = invert_spd(scale)?;
    let c = lower_from_flat(&cholesky_lower(&precision_scale)?, d);
    let mut a = DMatrix::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new(nu - i as f64).ok()?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let ca = c * a;
    let wishart = &ca * ca.transpose();
    invert_spd(&wishart)
}

pub(crate) fn sample_mvn<R: Rng + ?Sized>(mean: &[f64], cov: &DMatrix<f64>, rng: &mut R) -> Option<Vec<f64>> {
    let d = mean.len();
    let l = cholesky_lower(cov)?;
    let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    Some(
        (0..d)
            .map(|i| mean[i] + (0..=i).map(|j| l[i * d + j] * z[j]).sum::<f64>())
            .collect(),
    )
}

pub(crate) fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let g: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).map(|d| d.sample(rng)).unwrap_or(0.0))
        .collect();
    let total: f64 = g.iter().sum();
    if total > 0.0 && total.is_finite() {
        g.iter().map(|x| x / total).collect()
    } else {
        vec![1.0 / alpha.len() as f64; alpha.len()]
    }
}

/// Draws an index from unnormalized log-probabilities.
fn sample_log_categorical<R: Rng + ?Sized>(ln_p: &[f64], rng: &mut R) -> usize {
    let max = ln_p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let probs: Vec<f64> = ln_p.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    let mut target = rng.random::<f64>() * total;
    for (k, p) in probs.iter().enumerate() {
        target -= p;
        if target <= 0.0 {
            return k;
        }
    }
    probs.len() - 1
}

/// Mean and centred scatter matrix of the selected rows of a flat `n x d` array.
pub(crate) fn suff_stats(data: &[f64], d: usize, rows: impl Iterator<Item = usize> + Clone) -> (usize, DVector<f64>, DMatrix<f64>) {
    let mut n = 0;
    let mut sum = DVector::zeros(d);
    for i in rows.clone() {
        n += 1;
        for j in 0..d {
            sum[j] += data[i * d + j];
        }
    }
    if n == 0 {
        return (0, sum, DMatrix::zeros(d, d));
    }
    let mean = sum / n as f64;
    let mut scatter = DMatrix::zeros(d, d);
    for i in rows {
        let x = &data[i * d..(i + 1) * d];
        for a in 0..d {
            let da = x[a] - mean[a];
            for b in 0..=a {
                scatter[(a, b)] += da * (x[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            scatter[(b, a)] = scatter[(a, b)];
        }
    }
    (n, mean, scatter)
}

/// k-means++ seeding followed by a few Lloyd steps, for the initial partition.
fn kmeans_init<R: Rng + ?Sized>(data: &[f64], d: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let n = data.len() / d;
    let row = |i: usize| &data[i * d..(i + 1) * d];
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();

    let mut centers: Vec<Vec<f64>> = vec![row(rng.random_range(0..n)).to_vec()];
    while centers.len() < k {
        let weights: Vec<f64> = (0..n)
            .map(|i| centers.iter().map(|c| dist2(row(i), c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in weights.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(row(next).to_vec());
    }

    let mut z = vec![0; n];
    for _ in 0..20 {
        for (i, zi) in z.iter_mut().enumerate() {
            *zi = (0..k)
                .min_by(|&a, &b| dist2(row(i), &centers[a]).total_cmp(&dist2(row(i), &centers[b])))
                .unwrap_or(0);
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| z[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            for j in 0..d {
                center[j] = members.iter().map(|&i| data[i * d + j]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    z
}

/// Runs one class's chain over the flat `n x d` data array.
pub(crate) fn run_chain<R: Rng + ?Sized>(
    data: &[f64],
    d: usize,
    prior: &NiwHyper,
    settings: &ChainSettings,
    rng: &mut R,
) -> Result<ChainOutput, MmError> {
    let n = data.len() / d;
    let k = settings.components;
    let diverged = |iteration| MmError::ChainDiverged {
        class: settings.class,
        iteration,
    };

    let mut z = if k == 1 { vec![0; n] } else { kmeans_init(data, d, k, rng) };
    let mut draws = Vec::new();
    let mut log_likelihood = Vec::with_capacity(settings.iterations);
    let mut occupancy = vec![0.0; k];
    let mut ln_terms = vec![0.0; k];

    for iteration in 0..settings.iterations {
        // Parameters given assignments.
        let mut counts = vec![0usize; k];
        for &zi in &z {
            counts[zi] += 1;
        }
        let alpha: Vec<f64> = counts.iter().map(|&c| settings.alpha0 + c as f64).collect();
        let weights = if k == 1 { vec![1.0] } else { sample_dirichlet(&alpha, rng) };

        let mut means = Vec::with_capacity(k);
        let mut covs = Vec::with_capacity(k);
        for comp in 0..k {
            let rows = (0..n).filter(|&i| z[i] == comp);
            let (nk, xbar, scatter) = suff_stats(data, d, rows);
            let post = prior.posterior(nk, &xbar, &scatter);
            let mut cov = sample_inverse_wishart(&post.scale_matrix(), post.nu, rng).ok_or_else(|| diverged(iteration))?;
            for i in 0..d {
                cov[(i, i)] += settings.ridge;
            }
            let mean = sample_mvn(&post.mean, &(&cov / post.kappa), rng).ok_or_else(|| diverged(iteration))?;
            means.push(mean);
            covs.push(cov);
        }
        let gaussians = means
            .iter()
            .zip(&covs)
            .map(|(m, c)| Gaussian::new(m, c))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| diverged(iteration))?;
        let ln_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();

        // Assignments given parameters; the log-likelihood comes for free.
        let mut ll = 0.0;
        for (i, zi) in z.iter_mut().enumerate() {
            let x = &data[i * d..(i + 1) * d];
            if k == 1 {
                ll += gaussians[0].ln_pdf(x);
                continue;
            }
            for comp in 0..k {
                ln_terms[comp] = ln_w[comp] + gaussians[comp].ln_pdf(x);
            }
            ll += log_sum_exp(&ln_terms);
            *zi = sample_log_categorical(&ln_terms, rng);
        }
        if !ll.is_finite() {
            return Err(diverged(iteration));
        }
        log_likelihood.push(ll);

        if iteration >= settings.burn_in && (iteration - settings.burn_in).is_multiple_of(settings.thinning) {
            for (occ, &c) in occupancy.iter_mut().zip(&counts) {
                *occ += c as f64 / n as f64;
            }
            draws.push(MixtureDraw {
                weights,
                means,
                covariances: covs.iter().map(matrix_to_rows).collect(),
            });
        }
    }
    let retained = draws.len().max(1) as f64;
    occupancy.iter_mut().for_each(|o| *o /= retained);
    Ok(ChainOutput {
        draws,
        diagnostics: ChainDiagnostics {
            class: settings.class,
            log_likelihood,
            occupancy,
        },
    })
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// Component order that best matches `reference` means (squared distance).
/// Exhaustive for up to 6 components, greedy beyond.
pub(crate) fn align_to(reference: &[Vec<f64>], means: &[Vec<f64>]) -> Vec<usize> {
    let k = reference.len();
    let cost = |a: usize, b: usize| -> f64 {
        reference[a].iter().zip(&means[b]).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    if k <= 6 {
        permutations(k)
            .into_iter()
            .min_by(|p, q| {
                let cp: f64 = p.iter().enumerate().map(|(a, &b)| cost(a, b)).sum();
                let cq: f64 = q.iter().enumerate().map(|(a, &b)| cost(a, b)).sum();
                cp.total_cmp(&cq)
            })
            .unwrap_or_default()
    } else {
        let mut used = vec![false; k];
        (0..k)
            .map(|a| {
                let b = (0..k)
                    .filter(|&b| !used[b])
                    .min_by(|&x, &y| cost(a, x).total_cmp(&cost(a, y)))
                    .expect("a free component remains");
                used[b] = true;
                b
            })
            .collect()
    }
}

/// Posterior mean of the retained draws after aligning component labels to
/// the first draw.
pub(crate) fn summarize(draws: &[MixtureDraw]) -> Option<MixtureDraw> {
    let first = draws.first()?;
    let k = first.components();
    let d = first.means[0].len();
    let mut weights = vec![0.0; k];
    let mut means = vec![vec![0.0; d]; k];
    let mut covs = vec![DMatrix::<f64>::zeros(d, d); k];
    for draw in draws {
        let perm = align_to(&first.means, &draw.means);
        for (a, &b) in perm.iter().enumerate() {
            weights[a] += draw.weights[b];
            for (m, x) in means[a].iter_mut().zip(&draw.means[b]) {
                *m += x;
            }
            covs[a] += draw.covariance(b);
        }
    }
    let s = draws.len() as f64;
    Some(MixtureDraw {
        weights: weights.iter().map(|w| w / s).collect(),
        means: means.into_iter().map(|m| m.into_iter().map(|x| x / s).collect()).collect(),
        covariances: covs.iter().map(|c| matrix_to_rows(&(c / s))).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn inverse_wishart_mean_matches_theory() {
        // E[Sigma] = scale / (nu - d - 1)
        let scale = DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0]);
        let nu = 10.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n {
            acc += sample_inverse_wishart(&scale, nu, &mut rng).unwrap();
        }
        let mean = acc / n as f64;
        let expect = &scale / (nu - 3.0);
        for i in 0..2 {
            for j in 0..2 {
                assert!((mean[(i, j)] - expect[(i, j)]).abs() < 0.02, "{mean} vs {expect}");
            }
        }
    }

    #[test]
    fn dirichlet_is_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut acc = [0.0; 3];
        for _ in 0..5000 {
            let w = sample_dirichlet(&[1.0, 2.0, 7.0], &mut rng);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, x) in acc.iter_mut().zip(w) {
                *a += x / 5000.0;
            }
        }
        assert!((acc[2] - 0.7).abs() < 0.01);
    }

    #[test]
    fn niw_posterior_matches_hand_update() {
        let prior = NiwHyper {
            mean: vec![0.0],
            kappa: 1.0,
            nu: 3.0,
            scale: vec![vec![1.0]],
        };
        // data {1, 3}: xbar 2, scatter 2
        let post = prior.posterior(2, &DVector::from_element(1, 2.0), &DMatrix::from_element(1, 1, 2.0));
        assert!((post.mean[0] - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(post.kappa, 3.0);
        assert_eq!(post.nu, 5.0);
        // 1 + 2 + (1*2/3) * 4
        assert!((post.scale[0][0] - (3.0 + 8.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn alignment_recovers_swap() {
        let reference = vec![vec![0.0, 0.0], vec![5.0, 5.0]];
        let swapped = vec![vec![5.1, 4.9], vec![0.2, -0.1]];
        assert_eq!(align_to(&reference, &swapped), vec![1, 0]);
        assert_eq!(permutations(3).len(), 6);
    }
}
