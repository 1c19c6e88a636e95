//! Domain types shared across the toolkit: label spaces, instances, datasets
//! and validated probability vectors.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{DatasetError, ProbError};

/// Tolerance used when accepting externally produced probability vectors.
pub const PROB_TOLERANCE: f64 = 1e-6;

/// Ordered set of class names plus the class reported as "positive" in
/// binary metrics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    classes: Vec<String>,
    positive_class: usize,
}

impl LabelSpace {
    pub fn new<S: Into<String>>(
        classes: impl IntoIterator<Item = S>,
        positive_class: usize,
    ) -> Result<Self, DatasetError> {
        let classes: Vec<String> = classes.into_iter().map(Into::into).collect();
        if classes.len() < 2 {
            return Err(DatasetError::InvalidLabelSpace(format!(
                "need at least 2 classes, got {}",
                classes.len()
            )));
        }
        let mut seen = HashSet::new();
        for c in &classes {
            if c.is_empty() {
                return Err(DatasetError::InvalidLabelSpace("empty class name".into()));
            }
            if !seen.insert(c.as_str()) {
                return Err(DatasetError::InvalidLabelSpace(format!(
                    "duplicate class name {c:?}"
                )));
            }
        }
        if positive_class >= classes.len() {
            return Err(DatasetError::InvalidLabelSpace(format!(
                "positive class {positive_class} out of range for {} classes",
                classes.len()
            )));
        }
        Ok(Self {
            classes,
            positive_class,
        })
    }

    /// The usual two-class setup: `["not_hate", "hate"]`, positive = 1.
    pub fn binary() -> Self {
        Self::new(["not_hate", "hate"], 1).expect("static label space is valid")
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn positive_class(&self) -> usize {
        self.positive_class
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn contains(&self, label: usize) -> bool {
        label < self.classes.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InstanceStatus {
    #[default]
    Active,
    Flagged,
    Removed,
    Reannotated,
}

impl InstanceStatus {
    /// Resolved instances no longer need human attention.
    pub fn is_resolved(self) -> bool {
        matches!(self, InstanceStatus::Removed | InstanceStatus::Reannotated)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InstanceStatus::Active => "active",
            InstanceStatus::Flagged => "flagged",
            InstanceStatus::Removed => "removed",
            InstanceStatus::Reannotated => "reannotated",
        }
    }
}

impl fmt::Display for InstanceStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub text: String,
    pub gold_label: Option<usize>,
    pub status: InstanceStatus,
}

impl Instance {
    pub fn new(id: impl Into<String>, text: impl Into<String>, gold_label: Option<usize>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            gold_label,
            status: InstanceStatus::Active,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Validation,
    Test,
    #[default]
    Unsplit,
}

/// A labelled (or partially labelled) collection of instances with unique ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    label_space: LabelSpace,
    instances: Vec<Instance>,
    split: SplitTag,
}

impl Dataset {
    pub fn new(
        label_space: LabelSpace,
        instances: Vec<Instance>,
        split: SplitTag,
    ) -> Result<Self, DatasetError> {
        let mut seen = HashSet::with_capacity(instances.len());
        for inst in &instances {
            if !seen.insert(inst.id.as_str()) {
                return Err(DatasetError::DuplicateId(inst.id.clone()));
            }
            if let Some(label) = inst.gold_label {
                if !label_space.contains(label) {
                    return Err(DatasetError::InvalidLabel {
                        id: inst.id.clone(),
                        label,
                        num_classes: label_space.num_classes(),
                    });
                }
            }
        }
        Ok(Self {
            label_space,
            instances,
            split,
        })
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn split(&self) -> SplitTag {
        self.split
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Instance> {
        self.instances.iter().find(|i| i.id == id)
    }

    /// Number of gold labels per class (`n_t`); unlabelled instances are skipped.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.label_space.num_classes()];
        for label in self.instances.iter().filter_map(|i| i.gold_label) {
            counts[label] += 1;
        }
        counts
    }

    /// Builds a new dataset over a subset of instances, keeping label space and split.
    pub fn with_instances(&self, instances: Vec<Instance>) -> Result<Self, DatasetError> {
        Self::new(self.label_space.clone(), instances, self.split)
    }

    pub fn into_instances(self) -> Vec<Instance> {
        self.instances
    }
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates against `m` classes with the default tolerance.
    pub fn new(values: Vec<f64>, m: usize) -> Result<Self, ProbError> {
        validate_prob_vector(&values, m, PROB_TOLERANCE)
    }

    /// Wraps values the caller has already normalized.
    pub(crate) fn from_normalized(values: Vec<f64>) -> Self {
        debug_assert!((values.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        Self(values)
    }

    /// Uniform distribution over `m` classes.
    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0 / m as f64; m])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    /// Index of the largest entry; exact ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate().skip(1) {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Checks that `v` is a length-`m` probability vector and renormalizes it so
/// downstream code sees an exact simplex point.
pub fn validate_prob_vector(v: &[f64], m: usize, tol: f64) -> Result<ProbVector, ProbError> {
    if v.len() != m {
        return Err(ProbError::WrongArity {
            expected: m,
            found: v.len(),
        });
    }
    for (index, &value) in v.iter().enumerate() {
        if !value.is_finite() {
            return Err(ProbError::NonFinite { index });
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(ProbError::OutOfRange { index, value });
        }
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(ProbError::NotNormalized { sum, tol });
    }
    if (sum - 1.0).abs() <= 1e-12 {
        return Ok(ProbVector(v.to_vec()));
    }
    Ok(ProbVector(v.iter().map(|x| x / sum).collect()))
}
