//! Synthetic fixtures with known ground truth.
//!
//! [`generate`] draws labelled ensemble predictions from a class-conditional
//! Gaussian mixture in log-odds space, the same model family the ensemble
//! fits, so [`oracle_posterior`] gives the exact Bayes answer to compare
//! against. The [`text`] submodule builds labelled toy corpora with controlled
//! ambiguity and label noise for the text baselines.

pub mod text;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::SynthError;
use crate::mm::{cholesky_lower, inverse_logodds, log_sum_exp, EnsembleFrame, Gaussian, Mixture, MixtureDraw};
use crate::triage::SampleMatrix;
use crate::types::ProbVector;

pub const SPEC_FORMAT: &str = "annoqual.generator_spec";
pub const SPEC_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub format: String,
    pub version: u32,
    pub num_classes: usize,
    pub model_ids: Vec<String>,
    /// True class probabilities `pi_t`.
    pub class_probs: Vec<f64>,
    /// One latent mixture per class, over `(m - 1) r` dimensions.
    pub classes: Vec<MixtureDraw>,
    pub n: usize,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(
        num_classes: usize,
        model_ids: Vec<String>,
        class_probs: Vec<f64>,
        classes: Vec<MixtureDraw>,
        n: usize,
        seed: u64,
    ) -> Result<Self, SynthError> {
        let spec = Self {
            format: SPEC_FORMAT.into(),
            version: SPEC_VERSION,
            num_classes,
            model_ids,
            class_probs,
            classes,
            n,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Two classes, one Gaussian each, `r` members whose log-odds share
    /// pairwise `correlation`. Class 0 sits at `+separation / 2` on every
    /// coordinate and class 1 at `-separation / 2`; `shifts[j]` moves member
    /// `j`'s log-odds for both classes, i.e. a systematic bias towards class 0.
    pub fn correlated_binary(
        shifts: &[f64],
        separation: f64,
        sd: f64,
        correlation: f64,
        n: usize,
        seed: u64,
    ) -> Result<Self, SynthError> {
        let r = shifts.len();
        let cov: Vec<Vec<f64>> = (0..r)
            .map(|i| (0..r).map(|j| if i == j { sd * sd } else { correlation * sd * sd }).collect())
            .collect();
        let class = |sign: f64| MixtureDraw {
            weights: vec![1.0],
            means: vec![shifts.iter().map(|s| sign * separation / 2.0 + s).collect()],
            covariances: vec![cov.clone()],
        };
        Self::new(
            2,
            (1..=r).map(|j| format!("model_{j}")).collect(),
            vec![0.5, 0.5],
            vec![class(1.0), class(-1.0)],
            n,
            seed,
        )
    }

    pub fn latent_dim(&self) -> usize {
        (self.num_classes.saturating_sub(1)) * self.model_ids.len()
    }

    pub fn with_seed(mut self, seed: u64, n: usize) -> Self {
        self.seed = seed;
        self.n = n;
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidSpec(msg));
        if self.num_classes < 2 {
            return bad("need at least 2 classes".into());
        }
        if self.model_ids.is_empty() {
            return bad("need at least one model".into());
        }
        if self.class_probs.len() != self.num_classes || self.classes.len() != self.num_classes {
            return bad("class_probs and classes need one entry per class".into());
        }
        if self.class_probs.iter().any(|p| !(*p >= 0.0)) || (self.class_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("class_probs must lie on the simplex".into());
        }
        let d = self.latent_dim();
        for (t, mix) in self.classes.iter().enumerate() {
            let k = mix.weights.len();
            if k == 0 || mix.means.len() != k || mix.covariances.len() != k {
                return bad(format!("class {t}: component lists disagree"));
            }
            if mix.weights.iter().any(|w| !(*w >= 0.0)) || (mix.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return bad(format!("class {t}: weights must lie on the simplex"));
            }
            for c in 0..k {
                if mix.means[c].len() != d || mix.covariances[c].len() != d || mix.covariances[c].iter().any(|r| r.len() != d) {
                    return bad(format!("class {t} component {c}: expected dimension {d}"));
                }
                if cholesky_lower(&mix.covariance(c)).is_none() {
                    return bad(format!("class {t} component {c}: covariance is not positive definite"));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        if spec.format != SPEC_FORMAT || spec.version != SPEC_VERSION {
            return Err(SynthError::InvalidSpec(format!(
                "unexpected format {:?} version {}",
                spec.format, spec.version
            )));
        }
        spec.validate()?;
        Ok(spec)
    }

    fn densities(&self) -> Vec<Mixture> {
        self.classes
            .iter()
            .map(|mix| {
                let comps = (0..mix.weights.len())
                    .map(|k| Gaussian::new(&mix.means[k], &mix.covariance(k)).expect("validated"))
                    .collect();
                Mixture::new(&mix.weights, comps).expect("validated")
            })
            .collect()
    }
}

fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let mut target = rng.random::<f64>();
    for (i, p) in probs.iter().enumerate() {
        target -= p;
        if target < 0.0 {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Latent draws and labels, before the probability inversion.
pub fn generate_latent(spec: &GeneratorSpec) -> Result<(Vec<Vec<f64>>, Vec<usize>), SynthError> {
    spec.validate()?;
    let d = spec.latent_dim();
    let factors: Vec<Vec<Vec<f64>>> = spec
        .classes
        .iter()
        .map(|mix| {
            (0..mix.weights.len())
                .map(|k| cholesky_lower(&mix.covariance(k)).expect("validated"))
                .collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut latent = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let t = sample_index(&spec.class_probs, &mut rng);
        let mix = &spec.classes[t];
        let k = sample_index(&mix.weights, &mut rng);
        let l = &factors[t][k];
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let u: Vec<f64> = (0..d)
            .map(|i| mix.means[k][i] + (0..=i).map(|j| l[i * d + j] * z[j]).sum::<f64>())
            .collect();
        latent.push(u);
        labels.push(t);
    }
    Ok((latent, labels))
}

/// Draws a labelled frame; each model's block of `m - 1` latent coordinates is
/// turned back into a probability vector with the inverse log-odds map.
pub fn generate(spec: &GeneratorSpec) -> Result<EnsembleFrame, SynthError> {
    let (latent, labels) = generate_latent(spec)?;
    let block = spec.num_classes - 1;
    let predictions: Vec<Vec<ProbVector>> = latent
        .iter()
        .map(|u| u.chunks(block).map(inverse_logodds).collect())
        .collect();
    let ids = (0..spec.n).map(|i| format!("syn-{:06}", i + 1)).collect();
    EnsembleFrame::new(spec.num_classes, spec.model_ids.clone(), ids, predictions, Some(labels))
        .map_err(|e| SynthError::InvalidSpec(e.to_string()))
}

/// Exact Bayes posterior `pi_t p(u | t) / sum_s pi_s p(u | s)` under the
/// generator's true parameters.
pub fn oracle_posterior(u: &[f64], spec: &GeneratorSpec) -> Result<ProbVector, SynthError> {
    let d = spec.latent_dim();
    if u.len() != d {
        return Err(SynthError::DimensionMismatch {
            expected: d,
            found: u.len(),
        });
    }
    Ok(oracle_with(&spec.densities(), &spec.class_probs, u))
}

fn oracle_with(densities: &[Mixture], class_probs: &[f64], u: &[f64]) -> ProbVector {
    let scores: Vec<f64> = densities
        .iter()
        .zip(class_probs)
        .map(|(mix, pi)| pi.ln() + mix.ln_pdf(u))
        .collect();
    let norm = log_sum_exp(&scores);
    ProbVector::from_normalized(scores.iter().map(|s| (s - norm).exp()).collect())
}

/// [`oracle_posterior`] for many points, reusing the factorizations.
pub fn oracle_posteriors(latent: &[Vec<f64>], spec: &GeneratorSpec) -> Result<Vec<ProbVector>, SynthError> {
    let densities = spec.densities();
    latent
        .iter()
        .map(|u| {
            if u.len() != spec.latent_dim() {
                return Err(SynthError::DimensionMismatch {
                    expected: spec.latent_dim(),
                    found: u.len(),
                });
            }
            Ok(oracle_with(&densities, &spec.class_probs, u))
        })
        .collect()
}

/// Row-major covariance from a dense matrix, for building specs.
pub fn covariance_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Binary sample matrix with heterogeneous spread, standing in for a
/// dropout-sampled classifier. Each instance has a base logit from
/// `N(0, 2^2)` and a logit spread from `U(0, 1.5)`; every sample is
/// `logistic(base + spread * z)` with `z ~ N(0, 1)`.
pub fn mock_samples(n: usize, samples: usize, seed: u64) -> Result<SampleMatrix, SynthError> {
    if samples == 0 {
        return Err(SynthError::InvalidSpec("need at least one sample per instance".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|_| {
            let base = 2.0 * rng.sample::<f64, _>(StandardNormal);
            let spread = rng.random_range(0.0..1.5);
            (0..samples)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    let p = 1.0 / (1.0 + (-(base + spread * z)).exp());
                    ProbVector::from_normalized(vec![1.0 - p, p])
                })
                .collect()
        })
        .collect();
    let ids = (0..n).map(|i| format!("syn-{:06}", i + 1)).collect();
    SampleMatrix::new("mock", 2, ids, rows).map_err(|e| SynthError::InvalidSpec(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar_spec(n: usize, seed: u64) -> GeneratorSpec {
        let class = |mu: f64| MixtureDraw {
            weights: vec![1.0],
            means: vec![vec![mu]],
            covariances: vec![vec![vec![1.0]]],
        };
        GeneratorSpec::new(2, vec!["m".into()], vec![0.5, 0.5], vec![class(-1.0), class(1.0)], n, seed).unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = GeneratorSpec::correlated_binary(&[0.0, 0.0, 1.0], 2.0, 1.0, 0.5, 200, 9).unwrap();
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = generate(&spec.clone().with_seed(10, 200)).unwrap();
        assert_ne!(generate(&spec).unwrap(), other);
    }

    #[test]
    fn class_share_concentrates() {
        let mut spec = scalar_spec(10_000, 4);
        spec.class_probs = vec![0.3, 0.7];
        let frame = generate(&spec).unwrap();
        let share = frame.labels().unwrap().iter().filter(|&&y| y == 1).count() as f64 / 10_000.0;
        // binomial sd = sqrt(0.21 / 10000) ~ 0.0046, so 0.02 is > 4 sd
        assert!((share - 0.7).abs() < 0.02, "share {share}");
    }

    #[test]
    fn singular_covariance_is_rejected() {
        let mut spec = GeneratorSpec::correlated_binary(&[0.0, 0.0], 2.0, 1.0, 0.0, 10, 1).unwrap();
        spec.classes[0].covariances[0] = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert!(matches!(generate(&spec), Err(SynthError::InvalidSpec(_))));
    }

    #[test]
    fn oracle_examples() {
        let spec = scalar_spec(1, 0);
        let p = oracle_posterior(&[0.0], &spec).unwrap();
        assert_abs_diff_eq!(p.get(0), 0.5, epsilon = 1e-12);

        // N(0.5; 1, 1) / (N(0.5; -1, 1) + N(0.5; 1, 1)) = logistic(2 * 0.5)
        let p = oracle_posterior(&[0.5], &spec).unwrap();
        let direct = {
            let n = |x: f64, mu: f64| (-(x - mu) * (x - mu) / 2.0).exp();
            n(0.5, 1.0) / (n(0.5, 1.0) + n(0.5, -1.0))
        };
        assert_abs_diff_eq!(p.get(1), direct, epsilon = 1e-12);
        assert_abs_diff_eq!(p.get(1), 0.7310586, epsilon = 1e-7);

        let p = oracle_posterior(&[12.0], &spec).unwrap();
        assert!(p.get(1) > 1.0 - 1e-6);
        assert!(matches!(oracle_posterior(&[0.0, 1.0], &spec), Err(SynthError::DimensionMismatch { .. })));
    }

    #[test]
    fn mock_samples_have_spread() {
        let m = mock_samples(200, 5, 1).unwrap();
        assert_eq!((m.len(), m.num_samples()), (200, 5));
        let recs = crate::triage::aggregate_samples(&m).unwrap();
        assert!(recs.iter().any(|r| r.variance > 0.01));
        assert_eq!(m, mock_samples(200, 5, 1).unwrap());
        assert!(mock_samples(3, 0, 1).is_err());
    }

    #[test]
    fn spec_json_roundtrip() {
        let spec = GeneratorSpec::correlated_binary(&[0.0, 1.0], 2.0, 1.0, 0.3, 50, 2).unwrap();
        assert_eq!(GeneratorSpec::from_json(&spec.to_json()).unwrap(), spec);
    }

    #[test]
    fn generated_probabilities_invert_latent() {
        let spec = scalar_spec(50, 3);
        let (latent, _) = generate_latent(&spec).unwrap();
        let frame = generate(&spec).unwrap();
        for (u, row) in latent.iter().zip(frame.rows()) {
            let back = crate::mm::logodds_transform(&row[0], 1e-6);
            assert_abs_diff_eq!(back[0], u[0], epsilon = 1e-9);
        }
    }
}
