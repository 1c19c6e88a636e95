//! Cross-fitted training-set cleaning.
//!
//! Every training instance gets its uncertainty from a predictor that never
//! saw it: the set is split into stratified folds, the predictor is trained
//! on all other folds and sampled on the held-out one. The highest-variance
//! instances overall are then dropped.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::CleaningError;
use crate::triage::{aggregate_samples, rank_and_partition, Budget, SampleMatrix, UncertaintyRecord};
use crate::types::{Dataset, Instance, InstanceStatus};

/// A trainable source of stochastic predictions.
///
/// Implementations must be re-entrant: folds are processed concurrently.
pub trait Predictor: Sync {
    /// Trains on `train` and returns `samples` stochastic predictions for
    /// each of `targets`, in order.
    fn sample_predictions(
        &self,
        train: &Dataset,
        targets: &[Instance],
        samples: usize,
        seed: u64,
    ) -> Result<SampleMatrix, Box<dyn std::error::Error + Send + Sync>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningPlan {
    pub folds: usize,
    pub removal_fraction: f64,
    pub samples_per_instance: usize,
    pub seed: u64,
}

impl Default for CleaningPlan {
    fn default() -> Self {
        Self {
            folds: 5,
            removal_fraction: 0.15,
            samples_per_instance: 30,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleaningOutcome {
    pub cleaned: Dataset,
    /// Removed instances in decreasing-variance order.
    pub removed: Vec<UncertaintyRecord>,
    /// The removed instances themselves, with status `Flagged`.
    pub flagged: Vec<Instance>,
    /// Cross-fitted records for every training instance, in dataset order.
    pub records: Vec<UncertaintyRecord>,
    pub warnings: Vec<String>,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Fold index per instance. Each class is shuffled and dealt round-robin,
/// continuing where the previous class stopped so fold sizes stay balanced.
pub fn stratified_folds(labels: &[usize], num_classes: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for class in 0..num_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        for i in members {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    assignment
}

pub fn crossfit_clean<P: Predictor + ?Sized>(
    train: &Dataset,
    plan: &CleaningPlan,
    predictor: &P,
) -> Result<CleaningOutcome, CleaningError> {
    if plan.folds < 2 {
        return Err(CleaningError::InvalidPlan("need at least 2 folds".into()));
    }
    if plan.folds > train.len() {
        return Err(CleaningError::InvalidPlan(format!(
            "{} folds for {} instances",
            plan.folds,
            train.len()
        )));
    }
    if !(0.0..1.0).contains(&plan.removal_fraction) {
        return Err(CleaningError::InvalidPlan("removal fraction must lie in [0, 1)".into()));
    }
    if plan.samples_per_instance == 0 {
        return Err(CleaningError::InvalidPlan("need at least one sample per instance".into()));
    }
    let labels: Vec<usize> = train
        .instances()
        .iter()
        .map(|i| i.gold_label.ok_or_else(|| CleaningError::Unlabeled(i.id.clone())))
        .collect::<Result<_, _>>()?;

    let m = train.label_space().num_classes();
    let assignment = stratified_folds(&labels, m, plan.folds, splitmix(plan.seed));
    let present: Vec<usize> = (0..m).filter(|&c| labels.contains(&c)).collect();
    for fold in 0..plan.folds {
        for &class in &present {
            if !(0..labels.len()).any(|i| assignment[i] == fold && labels[i] == class) {
                return Err(CleaningError::FoldTooSmall { fold, class });
            }
        }
    }

    let per_fold: Vec<Vec<(usize, UncertaintyRecord)>> = (0..plan.folds)
        .into_par_iter()
        .map(|fold| {
            let (held, rest): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| assignment[i] == fold);
            let fit_set = train.with_instances(rest.iter().map(|&i| train.instances()[i].clone()).collect())?;
            let targets: Vec<Instance> = held.iter().map(|&i| train.instances()[i].clone()).collect();
            let seed = splitmix(plan.seed ^ splitmix(fold as u64 + 1));
            let matrix = predictor
                .sample_predictions(&fit_set, &targets, plan.samples_per_instance, seed)
                .map_err(|source| CleaningError::PredictorFailure { fold, source })?;
            if matrix.instance_ids() != targets.iter().map(|t| t.id.clone()).collect::<Vec<_>>().as_slice() {
                return Err(CleaningError::PredictorFailure {
                    fold,
                    source: "predictor returned rows for different instances".into(),
                });
            }
            let records = aggregate_samples(&matrix)?;
            Ok(held.into_iter().zip(records).collect())
        })
        .collect::<Result<_, CleaningError>>()?;

    let mut slots: Vec<Option<UncertaintyRecord>> = vec![None; labels.len()];
    for (i, record) in per_fold.into_iter().flatten() {
        slots[i] = Some(record);
    }
    let records: Vec<UncertaintyRecord> = slots.into_iter().map(|r| r.expect("every fold covered")).collect();

    let partition = rank_and_partition(&records, Budget::Fraction(plan.removal_fraction))?;
    let removed_ids: HashSet<&str> = partition.uncertain.iter().map(String::as_str).collect();
    let removed: Vec<UncertaintyRecord> = partition
        .uncertain
        .iter()
        .map(|id| records.iter().find(|r| &r.instance_id == id).expect("ranked from records").clone())
        .collect();

    let mut survivors = Vec::with_capacity(train.len() - removed.len());
    let mut flagged = Vec::with_capacity(removed.len());
    for inst in train.instances() {
        if removed_ids.contains(inst.id.as_str()) {
            flagged.push(Instance {
                status: InstanceStatus::Flagged,
                ..inst.clone()
            });
        } else {
            survivors.push(inst.clone());
        }
    }
    Ok(CleaningOutcome {
        cleaned: train.with_instances(survivors)?,
        removed,
        flagged,
        records,
        warnings: partition.warnings,
    })
}
