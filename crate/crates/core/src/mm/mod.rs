//! Bayesian ensemble of probabilistic classifiers.
//!
//! Member predictions are mapped to log-odds against the last class and
//! concatenated into one latent vector per instance. Each true class gets its
//! own Gaussian mixture over that latent space, fitted by Gibbs sampling, and
//! new instances are scored with Bayes' rule over the class mixtures.

mod density;
mod frame;
mod gibbs;
mod model;
mod transform;

pub use density::{mvn_mixture_density, Gaussian, Mixture};
pub(crate) use density::{cholesky_lower, log_sum_exp};
pub use frame::EnsembleFrame;
pub use gibbs::{ChainDiagnostics, MixtureDraw, NiwHyper};
pub use model::{
    calibrate_single_model, fit_mm, held_out_log_likelihood, mm_predict, select_regularization,
    ChainSchedule, ClassParams, FrequencyPrior, GibbsConfig, MmFit, MmParams, MmPredictor, PriorConfig,
    Ridge, DEFAULT_INFLATION_GRID, PARAMS_FORMAT, PARAMS_VERSION,
};
pub use transform::{inverse_logodds, logodds_transform, merge_predictions, LatentVector, DEFAULT_CLAMP};
