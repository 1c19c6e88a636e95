use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{fit_docs, labelled, BowModel, Hyperparams, ModelKind};
use crate::cleaning::Predictor;
use crate::error::BaselineError;
use crate::triage::SampleMatrix;
use crate::types::{Dataset, Instance, ProbVector};

/// Resamples each class with replacement, keeping class counts fixed.
fn stratified_resample<'a>(docs: &[(&'a str, usize)], num_classes: usize, rng: &mut ChaCha8Rng) -> Vec<(&'a str, usize)> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, (_, y)) in docs.iter().enumerate() {
        by_class[*y].push(i);
    }
    let mut out = Vec::with_capacity(docs.len());
    for members in by_class.iter().filter(|m| !m.is_empty()) {
        for _ in 0..members.len() {
            out.push(docs[members[rng.random_range(0..members.len())]]);
        }
    }
    out
}

/// Trains `samples` bootstrap replicates of a baseline on `train` and
/// collects their predictions on `targets`. Replicate `t` is seeded with
/// `seed + t`, so results do not depend on thread scheduling.
pub fn bootstrap_sample_predictions(
    train: &Dataset,
    targets: &[Instance],
    kind: ModelKind,
    hyperparams: &Hyperparams,
    samples: usize,
    seed: u64,
) -> Result<SampleMatrix, BaselineError> {
    if samples == 0 {
        return Err(BaselineError::InvalidInput("need at least one bootstrap sample".into()));
    }
    let (docs, priors) = labelled(train)?;
    let m = priors.len();
    let models: Vec<BowModel> = (0..samples as u64)
        .into_par_iter()
        .map(|t| {
            let fit_seed = seed.wrapping_add(t);
            let mut rng = ChaCha8Rng::seed_from_u64(fit_seed);
            let resampled = stratified_resample(&docs, m, &mut rng);
            fit_docs(&resampled, priors.clone(), kind, hyperparams, fit_seed)
        })
        .collect::<Result<_, _>>()?;
    let rows: Vec<Vec<ProbVector>> = targets
        .par_iter()
        .map(|inst| models.iter().map(|model| model.predict_one(&inst.text)).collect())
        .collect();
    let ids = targets.iter().map(|i| i.id.clone()).collect();
    let model_id = match kind {
        ModelKind::NaiveBayes => "bootstrap-nb",
        ModelKind::LogisticRegression => "bootstrap-lr",
    };
    SampleMatrix::new(model_id, m, ids, rows).map_err(|e| BaselineError::InvalidInput(e.to_string()))
}

/// A [`Predictor`] backed by bootstrap replicates of a text baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapPredictor {
    pub kind: ModelKind,
    pub hyperparams: Hyperparams,
}

impl BootstrapPredictor {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            hyperparams: Hyperparams::default(),
        }
    }
}

impl Predictor for BootstrapPredictor {
    fn sample_predictions(
        &self,
        train: &Dataset,
        targets: &[Instance],
        samples: usize,
        seed: u64,
    ) -> Result<SampleMatrix, Box<dyn std::error::Error + Send + Sync>> {
        Ok(bootstrap_sample_predictions(train, targets, self.kind, &self.hyperparams, samples, seed)?)
    }
}
