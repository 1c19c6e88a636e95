use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::transform::{merge_predictions, LatentVector};
use crate::error::MmError;
use crate::types::ProbVector;

/// Aligned point predictions of `r` models over `N` instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleFrame {
    num_classes: usize,
    model_ids: Vec<String>,
    instance_ids: Vec<String>,
    predictions: Vec<Vec<ProbVector>>,
    labels: Option<Vec<usize>>,
}

impl EnsembleFrame {
    pub fn new(
        num_classes: usize,
        model_ids: Vec<String>,
        instance_ids: Vec<String>,
        predictions: Vec<Vec<ProbVector>>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self, MmError> {
        if num_classes < 2 {
            return Err(MmError::InvalidConfig("need at least 2 classes".into()));
        }
        if model_ids.is_empty() {
            return Err(MmError::InvalidConfig("frame has no models".into()));
        }
        if instance_ids.len() != predictions.len() {
            return Err(MmError::InvalidConfig(format!(
                "{} instance ids for {} prediction rows",
                instance_ids.len(),
                predictions.len()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(id) = instance_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(MmError::InvalidConfig(format!("duplicate instance id {id:?}")));
        }
        for row in &predictions {
            if row.len() != model_ids.len() {
                return Err(MmError::ArityMismatch {
                    expected: model_ids.len(),
                    found: row.len(),
                });
            }
            if let Some(p) = row.iter().find(|p| p.len() != num_classes) {
                return Err(MmError::DimensionMismatch {
                    expected: num_classes,
                    found: p.len(),
                });
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != instance_ids.len() {
                return Err(MmError::InvalidConfig(format!(
                    "{} labels for {} instances",
                    labels.len(),
                    instance_ids.len()
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
                return Err(MmError::InvalidConfig(format!("label {bad} out of range")));
            }
        }
        Ok(Self {
            num_classes,
            model_ids,
            instance_ids,
            predictions,
            labels,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_models(&self) -> usize {
        self.model_ids.len()
    }

    /// `(m - 1) r`.
    pub fn latent_dim(&self) -> usize {
        (self.num_classes - 1) * self.model_ids.len()
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn instance_ids(&self) -> &[String] {
        &self.instance_ids
    }

    pub fn len(&self) -> usize {
        self.instance_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instance_ids.is_empty()
    }

    pub fn row(&self, index: usize) -> &[ProbVector] {
        &self.predictions[index]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[ProbVector]> {
        self.predictions.iter().map(Vec::as_slice)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn with_labels(mut self, labels: Option<Vec<usize>>) -> Result<Self, MmError> {
        self.labels = None;
        let Self {
            num_classes,
            model_ids,
            instance_ids,
            predictions,
            ..
        } = self;
        Self::new(num_classes, model_ids, instance_ids, predictions, labels)
    }

    /// Predictions of a single member, by position.
    pub fn member(&self, model: usize) -> impl Iterator<Item = &ProbVector> {
        self.predictions.iter().map(move |row| &row[model])
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            num_classes: self.num_classes,
            model_ids: self.model_ids.clone(),
            instance_ids: rows.iter().map(|&i| self.instance_ids[i].clone()).collect(),
            predictions: rows.iter().map(|&i| self.predictions[i].clone()).collect(),
            labels: self.labels.as_ref().map(|l| rows.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Keeps only the listed members, in the given order.
    pub fn select_models(&self, models: &[usize]) -> Self {
        Self {
            num_classes: self.num_classes,
            model_ids: models.iter().map(|&m| self.model_ids[m].clone()).collect(),
            instance_ids: self.instance_ids.clone(),
            predictions: self
                .predictions
                .iter()
                .map(|row| models.iter().map(|&m| row[m].clone()).collect())
                .collect(),
            labels: self.labels.clone(),
        }
    }

    pub fn latent(&self, delta: f64) -> Vec<LatentVector> {
        self.predictions
            .iter()
            .map(|row| merge_predictions(row, self.model_ids.len(), delta).expect("rows validated on construction"))
            .collect()
    }
}
