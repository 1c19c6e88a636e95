//! Bag-of-words text classifiers used as desk-scale ensemble members, and a
//! bootstrap wrapper that makes them emit stochastic prediction samples.

mod bootstrap;
mod logistic;
mod naive_bayes;
mod tokenize;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use bootstrap::{bootstrap_sample_predictions, BootstrapPredictor};
pub use tokenize::{features, tokenize};

use crate::error::BaselineError;
use crate::types::{Dataset, ProbVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    NaiveBayes,
    LogisticRegression,
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nb" | "naive_bayes" => Ok(ModelKind::NaiveBayes),
            "lr" | "logistic_regression" => Ok(ModelKind::LogisticRegression),
            other => Err(format!("unknown model kind {other:?} (expected nb or lr)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Additive smoothing for naive Bayes.
    pub alpha: f64,
    /// L2 penalty for logistic regression.
    pub l2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            l2: 1e-3,
            epochs: 500,
            learning_rate: 0.1,
        }
    }
}

/// A trained bag-of-words classifier. `weights[t]` holds one weight per
/// vocabulary column followed by the class bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowModel {
    pub kind: ModelKind,
    pub vocabulary: BTreeMap<String, usize>,
    pub weights: Vec<Vec<f64>>,
    pub class_priors: Vec<f64>,
    pub hyperparams: Hyperparams,
    pub seed: u64,
}

/// Sparse `(column, count)` features restricted to the vocabulary.
pub(crate) fn encode(vocabulary: &BTreeMap<String, usize>, text: &str) -> Vec<(usize, f64)> {
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for f in features(text) {
        if let Some(&col) = vocabulary.get(&f) {
            *counts.entry(col).or_default() += 1.0;
        }
    }
    counts.into_iter().collect()
}

pub(crate) fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `(text, label)` pairs plus the class priors.
type Labelled<'a> = (Vec<(&'a str, usize)>, Vec<f64>);

/// Labelled training pairs plus the class priors.
pub(crate) fn labelled(train: &Dataset) -> Result<Labelled<'_>, BaselineError> {
    let docs: Vec<(&str, usize)> = train
        .instances()
        .iter()
        .filter_map(|i| i.gold_label.map(|y| (i.text.as_str(), y)))
        .collect();
    let m = train.label_space().num_classes();
    let mut counts = vec![0usize; m];
    for (_, y) in &docs {
        counts[*y] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(BaselineError::SingleClassTraining);
    }
    let total = docs.len() as f64;
    Ok((docs, counts.iter().map(|&c| c as f64 / total).collect()))
}

fn build_vocabulary<'a>(texts: impl Iterator<Item = &'a str>) -> BTreeMap<String, usize> {
    let mut vocab: BTreeMap<String, usize> = texts.flat_map(features).map(|f| (f, 0)).collect();
    for (i, v) in vocab.values_mut().enumerate() {
        *v = i;
    }
    vocab
}

/// Trains a baseline on the labelled instances of `train`; unlabelled ones are ignored.
pub fn train_baseline(
    train: &Dataset,
    kind: ModelKind,
    hyperparams: &Hyperparams,
    seed: u64,
) -> Result<BowModel, BaselineError> {
    let (docs, class_priors) = labelled(train)?;
    fit_docs(&docs, class_priors, kind, hyperparams, seed)
}

pub(crate) fn fit_docs(
    docs: &[(&str, usize)],
    class_priors: Vec<f64>,
    kind: ModelKind,
    hyperparams: &Hyperparams,
    seed: u64,
) -> Result<BowModel, BaselineError> {
    let vocabulary = build_vocabulary(docs.iter().map(|(t, _)| *t));
    if vocabulary.is_empty() {
        return Err(BaselineError::EmptyVocabulary);
    }
    let encoded: Vec<(Vec<(usize, f64)>, usize)> = docs.iter().map(|(t, y)| (encode(&vocabulary, t), *y)).collect();
    let m = class_priors.len();
    let weights = match kind {
        ModelKind::NaiveBayes => naive_bayes::fit(&encoded, vocabulary.len(), m, &class_priors, hyperparams.alpha),
        ModelKind::LogisticRegression => logistic::fit(&encoded, vocabulary.len(), m, hyperparams),
    };
    Ok(BowModel {
        kind,
        vocabulary,
        weights,
        class_priors,
        hyperparams: hyperparams.clone(),
        seed,
    })
}

impl BowModel {
    pub fn num_classes(&self) -> usize {
        self.class_priors.len()
    }

    pub fn predict_one(&self, text: &str) -> ProbVector {
        let x = encode(&self.vocabulary, text);
        if x.is_empty() {
            return ProbVector::from_normalized(self.class_priors.clone());
        }
        let v = self.vocabulary.len();
        let scores: Vec<f64> = self
            .weights
            .iter()
            .map(|w| {
                let linear: f64 = x
                    .iter()
                    .map(|&(col, count)| {
                        let value = match self.kind {
                            ModelKind::NaiveBayes => count,
                            ModelKind::LogisticRegression => 1.0,
                        };
                        w[col] * value
                    })
                    .sum();
                linear + w[v]
            })
            .collect();
        ProbVector::from_normalized(softmax(&scores))
    }
}

/// Class probabilities for each text. Texts with no known feature get the
/// training class priors.
pub fn predict_proba<S: AsRef<str>>(model: &BowModel, texts: &[S]) -> Vec<ProbVector> {
    texts.iter().map(|t| model.predict_one(t.as_ref())).collect()
}
