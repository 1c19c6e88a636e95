//! Fitting and applying the class-conditional mixture ensemble.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::density::{cholesky_lower, Gaussian, Mixture};
use super::frame::EnsembleFrame;
use super::gibbs::{self, ChainDiagnostics, ChainSettings, MixtureDraw, NiwHyper};
use super::transform::{LatentVector, DEFAULT_CLAMP};
use crate::error::MmError;
use crate::types::ProbVector;

pub const PARAMS_FORMAT: &str = "annoqual.mm_params";
pub const PARAMS_VERSION: u32 = 1;
pub const DEFAULT_INFLATION_GRID: [f64; 4] = [1.0, 2.0, 5.0, 10.0];

/// Hyperparameters of the normal-inverse-Wishart and Dirichlet priors. Unset
/// fields are filled in per class from that class's training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    /// Prior mean; defaults to the class's empirical mean.
    pub mean: Option<Vec<f64>>,
    pub kappa0: f64,
    /// Degrees of freedom; defaults to `dim + 2`.
    pub nu0: Option<f64>,
    /// Scale matrix; defaults to the class's empirical covariance.
    pub scale: Option<Vec<Vec<f64>>>,
    pub alpha0: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            mean: None,
            kappa0: 0.01,
            nu0: None,
            scale: None,
            alpha0: 1.0,
        }
    }
}

/// Diagonal jitter added to every covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ridge {
    /// Multiple of `trace(Sigma) / dim` of the class's empirical covariance.
    Relative(f64),
    Absolute(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Relative(1e-6)
    }
}

/// How the per-class multiplier `gamma_t` next to the class count is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyPrior {
    /// `gamma_t = 1`, so the class weight is the training count `n_t`.
    #[default]
    Uniform,
    /// `gamma_t = n_t / N`.
    Empirical,
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    /// Mixture components per class.
    pub components: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub prior: PriorConfig,
    pub ridge: Ridge,
    pub seed: u64,
    /// Probability clamp used by the log-odds transform.
    pub delta: f64,
    pub frequency_prior: FrequencyPrior,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            components: 1,
            iterations: 2000,
            burn_in: 1000,
            thinning: 2,
            prior: PriorConfig::default(),
            ridge: Ridge::default(),
            seed: 0,
            delta: DEFAULT_CLAMP,
            frequency_prior: FrequencyPrior::Uniform,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self, dim: usize) -> Result<(), MmError> {
        let bad = |msg: String| Err(MmError::InvalidConfig(msg));
        if self.components == 0 {
            return bad("components must be at least 1".into());
        }
        if self.burn_in >= self.iterations {
            return bad(format!("burn_in {} must be below iterations {}", self.burn_in, self.iterations));
        }
        if self.thinning == 0 {
            return bad("thinning must be at least 1".into());
        }
        if !(self.prior.kappa0 > 0.0) {
            return bad("kappa0 must be positive".into());
        }
        if !(self.prior.alpha0 > 0.0) {
            return bad("alpha0 must be positive".into());
        }
        if let Some(nu0) = self.prior.nu0 {
            if !(nu0 > dim as f64 - 1.0) {
                return bad(format!("nu0 {nu0} must exceed dim - 1 = {}", dim as f64 - 1.0));
            }
        }
        match self.ridge {
            Ridge::Relative(x) | Ridge::Absolute(x) if x > 0.0 => {}
            _ => return bad("ridge must be positive".into()),
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return bad(format!("clamp delta {} must lie in (0, 0.5)", self.delta));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    pub class: usize,
    /// Training count `n_t`.
    pub count: usize,
    /// Frequency prior `gamma_t`.
    pub frequency_prior: f64,
    pub ridge: f64,
    pub prior: Option<NiwHyper>,
    /// Posterior mean of the retained draws.
    pub summary: MixtureDraw,
    #[serde(default)]
    pub draws: Vec<MixtureDraw>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSchedule {
    pub components: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    pub alpha0: f64,
}

/// Fitted ensemble parameters. Serialized as a self-describing JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmParams {
    pub format: String,
    pub version: u32,
    pub num_classes: usize,
    /// Class whose probability is the log-odds denominator; always the last.
    pub reference_class: usize,
    pub model_ids: Vec<String>,
    pub layout: String,
    pub latent_dim: usize,
    pub delta: f64,
    pub schedule: Option<ChainSchedule>,
    pub classes: Vec<ClassParams>,
    /// Per-dimension variance inflation; all ones means no regularization.
    pub inflation: Vec<f64>,
}

impl MmParams {
    /// Assembles parameters by hand from one summary mixture per class.
    /// `classes[t] = (n_t, gamma_t, mixture)`.
    pub fn from_mixtures(
        num_classes: usize,
        model_ids: Vec<String>,
        delta: f64,
        classes: Vec<(usize, f64, MixtureDraw)>,
    ) -> Result<Self, MmError> {
        let latent_dim = (num_classes.saturating_sub(1)) * model_ids.len();
        let params = Self {
            format: PARAMS_FORMAT.into(),
            version: PARAMS_VERSION,
            num_classes,
            reference_class: num_classes.saturating_sub(1),
            model_ids,
            layout: "model_major".into(),
            latent_dim,
            delta,
            schedule: None,
            classes: classes
                .into_iter()
                .enumerate()
                .map(|(class, (count, gamma, summary))| ClassParams {
                    class,
                    count,
                    frequency_prior: gamma,
                    ridge: 0.0,
                    prior: None,
                    summary,
                    draws: Vec::new(),
                })
                .collect(),
            inflation: vec![1.0; latent_dim],
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), MmError> {
        let bad = |msg: String| Err(MmError::InvalidConfig(msg));
        if self.format != PARAMS_FORMAT {
            return bad(format!("unexpected format tag {:?}", self.format));
        }
        if self.version != PARAMS_VERSION {
            return bad(format!("unsupported params version {}", self.version));
        }
        if self.num_classes < 2 || self.classes.len() != self.num_classes {
            return bad(format!("{} class blocks for {} classes", self.classes.len(), self.num_classes));
        }
        if self.latent_dim != (self.num_classes - 1) * self.model_ids.len() {
            return bad("latent_dim does not equal (m - 1) r".into());
        }
        if self.inflation.len() != self.latent_dim || self.inflation.iter().any(|r| !(*r >= 1.0)) {
            return bad("inflation must have one entry >= 1 per latent dimension".into());
        }
        for (t, c) in self.classes.iter().enumerate() {
            if c.class != t {
                return bad(format!("class block {t} is labelled {}", c.class));
            }
            if !(c.frequency_prior > 0.0) || c.count == 0 {
                return bad(format!("class {t} needs n_t > 0 and gamma_t > 0"));
            }
            for draw in std::iter::once(&c.summary).chain(&c.draws) {
                check_draw(draw, self.latent_dim)?;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, MmError> {
        let params: Self =
            serde_json::from_str(text).map_err(|e| MmError::InvalidConfig(format!("params document: {e}")))?;
        params.validate()?;
        Ok(params)
    }

    pub fn num_draws(&self) -> usize {
        self.classes.iter().map(|c| c.draws.len()).min().unwrap_or(0)
    }
}

fn check_draw(draw: &MixtureDraw, dim: usize) -> Result<(), MmError> {
    let k = draw.weights.len();
    if k == 0 || draw.means.len() != k || draw.covariances.len() != k {
        return Err(MmError::InvalidConfig("mixture component lists disagree".into()));
    }
    if (draw.weights.iter().sum::<f64>() - 1.0).abs() > 1e-6 || draw.weights.iter().any(|w| *w < 0.0) {
        return Err(MmError::InvalidConfig("mixture weights must lie on the simplex".into()));
    }
    for (mu, cov) in draw.means.iter().zip(&draw.covariances) {
        if mu.len() != dim {
            return Err(MmError::DimensionMismatch { expected: dim, found: mu.len() });
        }
        if cov.len() != dim || cov.iter().any(|row| row.len() != dim) {
            return Err(MmError::DimensionMismatch { expected: dim, found: cov.len() });
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct MmFit {
    pub params: MmParams,
    pub diagnostics: Vec<ChainDiagnostics>,
}

fn empirical_moments(data: &[f64], d: usize) -> (Vec<f64>, nalgebra::DMatrix<f64>) {
    let n = data.len() / d;
    let (_, mean, scatter) = gibbs::suff_stats(data, d, 0..n);
    (mean.iter().copied().collect(), scatter / n as f64)
}

/// Fits one mixture per class by Gibbs sampling on the frame's latent vectors.
pub fn fit_mm(train: &EnsembleFrame, config: &GibbsConfig) -> Result<MmFit, MmError> {
    let labels = train.labels().ok_or(MmError::MissingLabels)?;
    let d = train.latent_dim();
    let m = train.num_classes();
    config.validate(d)?;
    if let FrequencyPrior::Custom(g) = &config.frequency_prior {
        if g.len() != m || g.iter().any(|x| !(*x > 0.0)) {
            return Err(MmError::InvalidConfig("custom frequency prior needs m positive entries".into()));
        }
    }

    let latent = train.latent(config.delta);
    let mut per_class: Vec<Vec<f64>> = vec![Vec::new(); m];
    for (u, &y) in latent.iter().zip(labels) {
        per_class[y].extend_from_slice(u.values());
    }
    let required = config.components + d + 2;
    for (class, data) in per_class.iter().enumerate() {
        let count = data.len() / d;
        if count < required {
            return Err(MmError::ClassTooSmall { class, count, required });
        }
    }

    let outputs = per_class
        .par_iter()
        .enumerate()
        .map(|(class, data)| {
            let (emp_mean, emp_cov) = empirical_moments(data, d);
            let ridge = match config.ridge {
                Ridge::Absolute(e) => e,
                Ridge::Relative(c) => {
                    let scaled = c * emp_cov.trace() / d as f64;
                    if scaled > 0.0 && scaled.is_finite() {
                        scaled
                    } else {
                        c
                    }
                }
            };
            let mean = config.prior.mean.clone().unwrap_or(emp_mean);
            if mean.len() != d {
                return Err(MmError::DimensionMismatch { expected: d, found: mean.len() });
            }
            let scale = match &config.prior.scale {
                Some(rows) => {
                    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                        return Err(MmError::DimensionMismatch { expected: d, found: rows.len() });
                    }
                    gibbs::rows_to_matrix(rows)
                }
                None => {
                    let mut s = emp_cov.clone();
                    for i in 0..d {
                        s[(i, i)] += ridge;
                    }
                    s
                }
            };
            if cholesky_lower(&scale).is_none() {
                return Err(MmError::NotPositiveDefinite);
            }
            let prior = NiwHyper {
                mean,
                kappa: config.prior.kappa0,
                nu: config.prior.nu0.unwrap_or(d as f64 + 2.0),
                scale: gibbs::matrix_to_rows(&scale),
            };
            let settings = ChainSettings {
                components: config.components,
                iterations: config.iterations,
                burn_in: config.burn_in,
                thinning: config.thinning,
                alpha0: config.prior.alpha0,
                ridge,
                class,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(class as u64);
            let out = gibbs::run_chain(data, d, &prior, &settings, &mut rng)?;
            Ok((prior, ridge, out))
        })
        .collect::<Result<Vec<_>, MmError>>()?;

    let total = labels.len() as f64;
    let mut classes = Vec::with_capacity(m);
    let mut diagnostics = Vec::with_capacity(m);
    for (class, (prior, ridge, out)) in outputs.into_iter().enumerate() {
        let count = per_class[class].len() / d;
        let gamma = match &config.frequency_prior {
            FrequencyPrior::Uniform => 1.0,
            FrequencyPrior::Empirical => count as f64 / total,
            FrequencyPrior::Custom(g) => g[class],
        };
        let summary = gibbs::summarize(&out.draws).ok_or_else(|| MmError::InvalidConfig("no draws retained".into()))?;
        classes.push(ClassParams {
            class,
            count,
            frequency_prior: gamma,
            ridge,
            prior: Some(prior),
            summary,
            draws: out.draws,
        });
        diagnostics.push(out.diagnostics);
    }

    let params = MmParams {
        format: PARAMS_FORMAT.into(),
        version: PARAMS_VERSION,
        num_classes: m,
        reference_class: m - 1,
        model_ids: train.model_ids().to_vec(),
        layout: "model_major".into(),
        latent_dim: d,
        delta: config.delta,
        schedule: Some(ChainSchedule {
            components: config.components,
            iterations: config.iterations,
            burn_in: config.burn_in,
            thinning: config.thinning,
            seed: config.seed,
            alpha0: config.prior.alpha0,
        }),
        classes,
        inflation: vec![1.0; d],
    };
    Ok(MmFit { params, diagnostics })
}

/// The same fit applied to a single classifier's predictions, which turns the
/// predictive distribution into a recalibrated version of that classifier.
pub fn calibrate_single_model(frame: &EnsembleFrame, config: &GibbsConfig) -> Result<MmFit, MmError> {
    if frame.num_models() != 1 {
        return Err(MmError::ArityMismatch {
            expected: 1,
            found: frame.num_models(),
        });
    }
    fit_mm(frame, config)
}

/// Pre-factored class densities, ready for repeated prediction.
#[derive(Debug, Clone)]
pub struct MmPredictor {
    num_classes: usize,
    num_models: usize,
    dim: usize,
    delta: f64,
    ln_class_weight: Vec<f64>,
    /// `draws[s][t]` is class `t`'s mixture in draw `s`.
    draws: Vec<Vec<Mixture>>,
}

fn build_mixture(draw: &MixtureDraw, inflation: &[f64]) -> Result<Mixture, MmError> {
    let comps = (0..draw.components())
        .map(|k| {
            let mut cov = draw.covariance(k);
            for (j, rho) in inflation.iter().enumerate() {
                cov[(j, j)] *= rho;
            }
            Gaussian::new(&draw.means[k], &cov)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Mixture::new(&draw.weights, comps)
}

impl MmPredictor {
    pub fn new(params: &MmParams) -> Result<Self, MmError> {
        Self::with_inflation(params, &params.inflation)
    }

    fn with_inflation(params: &MmParams, inflation: &[f64]) -> Result<Self, MmError> {
        if inflation.len() != params.latent_dim {
            return Err(MmError::DimensionMismatch {
                expected: params.latent_dim,
                found: inflation.len(),
            });
        }
        let num_draws = params.num_draws();
        let draws = if num_draws == 0 {
            vec![params
                .classes
                .iter()
                .map(|c| build_mixture(&c.summary, inflation))
                .collect::<Result<Vec<_>, _>>()?]
        } else {
            (0..num_draws)
                .map(|s| {
                    params
                        .classes
                        .iter()
                        .map(|c| build_mixture(&c.draws[s], inflation))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?
        };
        Ok(Self {
            num_classes: params.num_classes,
            num_models: params.model_ids.len(),
            dim: params.latent_dim,
            delta: params.delta,
            ln_class_weight: params
                .classes
                .iter()
                .map(|c| (c.frequency_prior * c.count as f64).ln())
                .collect(),
            draws,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Class posterior for one latent vector, averaged over posterior draws.
    pub fn predict(&self, u: &[f64]) -> Result<ProbVector, MmError> {
        if u.len() != self.dim {
            return Err(MmError::DimensionMismatch {
                expected: self.dim,
                found: u.len(),
            });
        }
        let m = self.num_classes;
        let mut acc = vec![0.0; m];
        let mut scores = vec![0.0; m];
        for draw in &self.draws {
            for (t, mix) in draw.iter().enumerate() {
                scores[t] = mix.ln_pdf(u) + self.ln_class_weight[t];
            }
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                total += *s;
            }
            for (a, s) in acc.iter_mut().zip(&scores) {
                *a += s / total;
            }
        }
        let total: f64 = acc.iter().sum();
        Ok(ProbVector::from_normalized(acc.into_iter().map(|a| a / total).collect()))
    }

    /// Predicts every row of a frame whose members match the fitted ones.
    pub fn predict_frame(&self, frame: &EnsembleFrame) -> Result<Vec<ProbVector>, MmError> {
        if frame.num_models() != self.num_models {
            return Err(MmError::ArityMismatch {
                expected: self.num_models,
                found: frame.num_models(),
            });
        }
        if frame.num_classes() != self.num_classes {
            return Err(MmError::DimensionMismatch {
                expected: self.num_classes,
                found: frame.num_classes(),
            });
        }
        frame
            .latent(self.delta)
            .par_iter()
            .map(|u| self.predict(u.values()))
            .collect()
    }
}

/// `p(t | u) ∝ p(u | θ_t) γ_t n_t`, normalized over classes.
pub fn mm_predict(u: &LatentVector, params: &MmParams) -> Result<ProbVector, MmError> {
    MmPredictor::new(params)?.predict(u.values())
}

fn validation_log_likelihood(
    params: &MmParams,
    inflation: &[f64],
    latent: &[LatentVector],
    labels: &[usize],
) -> Result<f64, MmError> {
    let predictor = MmPredictor::with_inflation(params, inflation)?;
    latent
        .par_iter()
        .zip(labels.par_iter())
        .map(|(u, &y)| Ok(predictor.predict(u.values())?.get(y).max(1e-300).ln()))
        .sum()
}

/// Greedy per-dimension choice of variance inflation on held-out
/// log-likelihood. Dimensions are visited in order; ties keep the smaller
/// factor. The result is stored in `params.inflation` and returned.
pub fn select_regularization(
    params: &mut MmParams,
    validation: &EnsembleFrame,
    grid: &[f64],
) -> Result<Vec<f64>, MmError> {
    if validation.is_empty() {
        return Err(MmError::EmptyValidation);
    }
    if !grid.contains(&1.0) {
        return Err(MmError::InvalidConfig("inflation grid must contain 1.0".into()));
    }
    if grid.iter().any(|g| !(*g >= 1.0)) {
        return Err(MmError::InvalidConfig("inflation factors must be >= 1".into()));
    }
    let labels = validation.labels().ok_or(MmError::MissingLabels)?;
    if validation.num_models() != params.model_ids.len() {
        return Err(MmError::ArityMismatch {
            expected: params.model_ids.len(),
            found: validation.num_models(),
        });
    }
    let mut candidates = grid.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let latent = validation.latent(params.delta);
    let mut inflation = vec![1.0; params.latent_dim];
    let mut best_ll = validation_log_likelihood(params, &inflation, &latent, labels)?;
    for j in 0..params.latent_dim {
        let mut best_rho = inflation[j];
        for &rho in candidates.iter().filter(|&&r| r != 1.0) {
            inflation[j] = rho;
            let ll = validation_log_likelihood(params, &inflation, &latent, labels)?;
            if ll > best_ll {
                best_ll = ll;
                best_rho = rho;
            }
        }
        inflation[j] = best_rho;
    }
    params.inflation = inflation.clone();
    Ok(inflation)
}

/// Held-out log-likelihood of the labels under a given inflation vector.
pub fn held_out_log_likelihood(
    params: &MmParams,
    inflation: &[f64],
    validation: &EnsembleFrame,
) -> Result<f64, MmError> {
    let labels = validation.labels().ok_or(MmError::MissingLabels)?;
    validation_log_likelihood(params, inflation, &validation.latent(params.delta), labels)
}
