//! Uncertainty triage over stochastic prediction samples.
//!
//! A [`SampleMatrix`] holds `T` stochastic forward passes (dropout samples,
//! bootstrap members, ...) per instance. [`aggregate_samples`] reduces them to
//! a mean prediction and the sample variance of one tracked probability, and
//! [`rank_and_partition`] splits instances into certain and uncertain sets.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::TriageError;
use crate::types::ProbVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMatrix {
    model_id: String,
    num_classes: usize,
    num_samples: usize,
    instance_ids: Vec<String>,
    samples: Vec<Vec<ProbVector>>,
}

impl SampleMatrix {
    /// `samples[i]` holds the `T` sample vectors for `instance_ids[i]`.
    pub fn new(
        model_id: impl Into<String>,
        num_classes: usize,
        instance_ids: Vec<String>,
        samples: Vec<Vec<ProbVector>>,
    ) -> Result<Self, TriageError> {
        if instance_ids.len() != samples.len() {
            return Err(TriageError::InvalidMatrix(format!(
                "{} instance ids but {} sample rows",
                instance_ids.len(),
                samples.len()
            )));
        }
        let num_samples = samples.first().map_or(1, Vec::len);
        if num_samples == 0 {
            return Err(TriageError::InvalidMatrix("T must be at least 1".into()));
        }
        let mut seen = HashSet::with_capacity(instance_ids.len());
        for (id, row) in instance_ids.iter().zip(&samples) {
            if !seen.insert(id.as_str()) {
                return Err(TriageError::InvalidMatrix(format!("duplicate instance id {id:?}")));
            }
            if row.len() != num_samples {
                return Err(TriageError::InvalidMatrix(format!(
                    "instance {id:?} has {} samples, expected {num_samples}",
                    row.len()
                )));
            }
            if let Some(bad) = row.iter().find(|p| p.len() != num_classes) {
                return Err(TriageError::InvalidMatrix(format!(
                    "instance {id:?} has a {}-class sample, expected {num_classes}",
                    bad.len()
                )));
            }
        }
        Ok(Self {
            model_id: model_id.into(),
            num_classes,
            num_samples,
            instance_ids,
            samples,
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// `T`, the number of stochastic samples per instance.
    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn len(&self) -> usize {
        self.instance_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instance_ids.is_empty()
    }

    pub fn instance_ids(&self) -> &[String] {
        &self.instance_ids
    }

    pub fn samples(&self, index: usize) -> &[ProbVector] {
        &self.samples[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[ProbVector])> {
        self.instance_ids
            .iter()
            .map(String::as_str)
            .zip(self.samples.iter().map(Vec::as_slice))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRecord {
    pub instance_id: String,
    pub mean: ProbVector,
    pub variance: f64,
    pub predicted_class: usize,
}

/// Argmax of the mean prediction; exact ties go to the lowest class index.
pub fn classify_from_mean(mean: &ProbVector) -> usize {
    mean.argmax()
}

/// Per-instance sample mean and unbiased variance of the tracked probability.
///
/// For two classes the tracked probability is that of class 1 (the variance
/// is identical for class 0). With more classes it is the probability of the
/// class that wins on the sample mean.
pub fn aggregate_samples(matrix: &SampleMatrix) -> Result<Vec<UncertaintyRecord>, TriageError> {
    if matrix.is_empty() {
        return Err(TriageError::EmptyMatrix);
    }
    let m = matrix.num_classes();
    let t = matrix.num_samples();
    if t == 1 {
        log::warn!(
            "model {}: only one sample per instance, variances are all 0",
            matrix.model_id()
        );
    }
    let records = matrix
        .iter()
        .map(|(id, samples)| {
            let mut mean = vec![0.0; m];
            for s in samples {
                for (acc, &p) in mean.iter_mut().zip(s.values()) {
                    *acc += p;
                }
            }
            mean.iter_mut().for_each(|v| *v /= t as f64);
            let total: f64 = mean.iter().sum();
            mean.iter_mut().for_each(|v| *v /= total);
            let mean = ProbVector::from_normalized(mean);
            let predicted_class = classify_from_mean(&mean);
            let tracked = if m == 2 { 1 } else { predicted_class };
            let variance = sample_variance(samples.iter().map(|s| s.get(tracked)), mean.get(tracked), t);
            UncertaintyRecord {
                instance_id: id.to_string(),
                mean,
                variance,
                predicted_class,
            }
        })
        .collect();
    Ok(records)
}

fn sample_variance(values: impl Iterator<Item = f64>, mean: f64, n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1) as f64).clamp(0.0, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Count(usize),
    Fraction(f64),
}

impl Budget {
    /// Number of instances to flag out of `n`; fractions round down.
    pub fn resolve(self, n: usize) -> Result<usize, TriageError> {
        match self {
            Budget::Count(c) if c <= n => Ok(c),
            Budget::Count(c) => Err(TriageError::BudgetTooLarge {
                requested: c.to_string(),
                available: n,
            }),
            Budget::Fraction(f) if (0.0..1.0).contains(&f) => {
                // Guard against 0.18 * 4000 = 719.9999...
                let raw = f * n as f64;
                let rounded = raw.round();
                let count = if (raw - rounded).abs() < 1e-9 { rounded } else { raw.floor() };
                Ok(count as usize)
            }
            Budget::Fraction(f) => Err(TriageError::BudgetTooLarge {
                requested: format!("fraction {f}"),
                available: n,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageResult {
    /// Ids in decreasing-uncertainty order.
    pub uncertain: Vec<String>,
    pub certain: Vec<String>,
    pub budget: Budget,
    /// Smallest variance among flagged records; `None` when nothing was flagged.
    pub threshold_variance: Option<f64>,
    pub warnings: Vec<String>,
}

/// Descending variance, then ascending instance id.
pub(crate) fn uncertainty_order(a: &UncertaintyRecord, b: &UncertaintyRecord) -> Ordering {
    b.variance
        .total_cmp(&a.variance)
        .then_with(|| a.instance_id.cmp(&b.instance_id))
}

/// Flags the `budget` highest-variance records as uncertain.
///
/// When every record has the same variance there is nothing to rank by, so the
/// uncertain set is left empty and a warning is attached.
pub fn rank_and_partition(
    records: &[UncertaintyRecord],
    budget: Budget,
) -> Result<TriageResult, TriageError> {
    let count = budget.resolve(records.len())?;
    let mut ranked: Vec<&UncertaintyRecord> = records.iter().collect();
    ranked.sort_by(|a, b| uncertainty_order(a, b));

    let mut warnings = Vec::new();
    let all_equal = ranked
        .first()
        .is_some_and(|first| ranked.iter().all(|r| r.variance == first.variance));
    let count = if all_equal && count > 0 {
        let msg = format!(
            "all {} records share variance {}; nothing flagged",
            ranked.len(),
            ranked[0].variance
        );
        log::warn!("{msg}");
        warnings.push(msg);
        0
    } else {
        count
    };

    let (uncertain, certain) = ranked.split_at(count);
    Ok(TriageResult {
        threshold_variance: uncertain.last().map(|r| r.variance),
        uncertain: uncertain.iter().map(|r| r.instance_id.clone()).collect(),
        certain: certain.iter().map(|r| r.instance_id.clone()).collect(),
        budget,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn binary_matrix(rows: &[(&str, &[f64])]) -> SampleMatrix {
        let ids = rows.iter().map(|(id, _)| id.to_string()).collect();
        let samples = rows
            .iter()
            .map(|(_, ps)| {
                ps.iter()
                    .map(|&p| ProbVector::new(vec![1.0 - p, p], 2).unwrap())
                    .collect()
            })
            .collect();
        SampleMatrix::new("m", 2, ids, samples).unwrap()
    }

    fn record(id: &str, variance: f64) -> UncertaintyRecord {
        UncertaintyRecord {
            instance_id: id.into(),
            mean: ProbVector::uniform(2),
            variance,
            predicted_class: 0,
        }
    }

    #[test]
    fn aggregate_matches_hand_values() {
        let recs = aggregate_samples(&binary_matrix(&[("three", &[0.4, 0.5, 0.6])])).unwrap();
        assert!((recs[0].mean.get(1) - 0.5).abs() < 1e-12);
        assert!((recs[0].variance - 0.01).abs() < 1e-12);

        let recs = aggregate_samples(&binary_matrix(&[("c", &[0.9, 0.9, 0.9])])).unwrap();
        assert_eq!(recs[0].variance, 0.0);

        let recs = aggregate_samples(&binary_matrix(&[("two", &[0.0, 1.0])])).unwrap();
        assert!((recs[0].mean.get(1) - 0.5).abs() < 1e-12);
        assert!((recs[0].variance - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_sample_has_zero_variance() {
        let recs = aggregate_samples(&binary_matrix(&[("a", &[0.3]), ("b", &[0.8])])).unwrap();
        assert!(recs.iter().all(|r| r.variance == 0.0));
    }

    #[test]
    fn multiclass_tracks_argmax_of_mean() {
        let s = |v: [f64; 3]| ProbVector::new(v.to_vec(), 3).unwrap();
        let m = SampleMatrix::new(
            "m",
            3,
            vec!["x".into()],
            vec![vec![s([0.1, 0.2, 0.7]), s([0.1, 0.4, 0.5])]],
        )
        .unwrap();
        let r = &aggregate_samples(&m).unwrap()[0];
        assert_eq!(r.predicted_class, 2);
        // class-2 probabilities 0.7 and 0.5: unbiased variance 0.02
        assert!((r.variance - 0.02).abs() < 1e-12);
    }

    #[test]
    fn empty_matrix_is_an_error() {
        let m = SampleMatrix::new("m", 2, vec![], vec![]).unwrap();
        assert_eq!(aggregate_samples(&m), Err(TriageError::EmptyMatrix));
    }

    #[test]
    fn matrix_rejects_ragged_rows() {
        let p = ProbVector::uniform(2);
        let err = SampleMatrix::new(
            "m",
            2,
            vec!["a".into(), "b".into()],
            vec![vec![p.clone(), p.clone()], vec![p]],
        );
        assert!(matches!(err, Err(TriageError::InvalidMatrix(_))));
    }

    #[test]
    fn classify_examples() {
        let p = |a: f64| ProbVector::new(vec![a, 1.0 - a], 2).unwrap();
        assert_eq!(classify_from_mean(&p(0.3)), 1);
        assert_eq!(classify_from_mean(&p(0.5)), 0);
        assert_eq!(classify_from_mean(&p(0.49)), 1);
    }

    #[test]
    fn partition_examples() {
        let recs = vec![record("a", 0.01), record("b", 0.2), record("c", 0.05)];
        let t = rank_and_partition(&recs, Budget::Count(1)).unwrap();
        assert_eq!(t.uncertain, vec!["b"]);
        assert_eq!(t.certain, vec!["c", "a"]);
        assert_eq!(t.threshold_variance, Some(0.2));

        let t = rank_and_partition(&recs, Budget::Count(0)).unwrap();
        assert!(t.uncertain.is_empty());
        assert_eq!(t.certain.len(), 3);
        assert_eq!(t.threshold_variance, None);

        assert!(matches!(
            rank_and_partition(&recs, Budget::Count(4)),
            Err(TriageError::BudgetTooLarge { .. })
        ));
        assert!(matches!(
            rank_and_partition(&recs, Budget::Fraction(1.0)),
            Err(TriageError::BudgetTooLarge { .. })
        ));
    }

    #[test]
    fn fraction_budget_floors() {
        assert_eq!(Budget::Fraction(0.18).resolve(4000).unwrap(), 720);
        assert_eq!(Budget::Fraction(0.15).resolve(600).unwrap(), 90);
        assert_eq!(Budget::Fraction(0.5).resolve(7).unwrap(), 3);
        assert_eq!(Budget::Fraction(0.0).resolve(7).unwrap(), 0);
    }

    #[test]
    fn equal_variances_flag_nothing() {
        let recs = vec![record("a", 0.1), record("b", 0.1)];
        let t = rank_and_partition(&recs, Budget::Count(1)).unwrap();
        assert!(t.uncertain.is_empty());
        assert_eq!(t.warnings.len(), 1);
    }

    #[test]
    fn ties_break_by_id() {
        let recs = vec![record("z", 0.3), record("b", 0.3), record("a", 0.1)];
        let t = rank_and_partition(&recs, Budget::Count(1)).unwrap();
        assert_eq!(t.uncertain, vec!["b"]);
    }

    fn arb_records() -> impl Strategy<Value = Vec<UncertaintyRecord>> {
        proptest::collection::vec((0u8..20, 0.0f64..0.5), 1..40).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (bucket, var))| {
                    // quantize some variances to force ties
                    let variance = if bucket < 5 { f64::from(bucket) / 20.0 } else { var };
                    record(&format!("id{i:03}"), variance)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn partition_orders_by_variance(recs in arb_records(), frac in 0.0f64..1.0) {
            let t = rank_and_partition(&recs, Budget::Fraction(frac)).unwrap();
            prop_assert_eq!(t.uncertain.len() + t.certain.len(), recs.len());
            let var = |id: &String| recs.iter().find(|r| &r.instance_id == id).unwrap().variance;
            if let (Some(min_u), Some(max_c)) = (
                t.uncertain.iter().map(var).reduce(f64::min),
                t.certain.iter().map(var).reduce(f64::max),
            ) {
                prop_assert!(min_u >= max_c);
            }
        }

        #[test]
        fn budget_is_monotone(recs in arb_records(), a in 0usize..40, b in 0usize..40) {
            let n = recs.len();
            let (lo, hi) = (a.min(b).min(n), a.max(b).min(n));
            let small = rank_and_partition(&recs, Budget::Count(lo)).unwrap();
            let large = rank_and_partition(&recs, Budget::Count(hi)).unwrap();
            for id in &small.uncertain {
                prop_assert!(large.uncertain.contains(id));
            }
        }

        #[test]
        fn means_stay_on_simplex(rows in proptest::collection::vec(proptest::collection::vec(0.0f64..=1.0, 3), 1..10)) {
            let ids = (0..rows.len()).map(|i| format!("i{i}")).collect();
            let samples = rows.iter().map(|r| r.iter().map(|&p| ProbVector::new(vec![1.0 - p, p], 2).unwrap()).collect()).collect();
            let m = SampleMatrix::new("m", 2, ids, samples).unwrap();
            for r in aggregate_samples(&m).unwrap() {
                let s: f64 = r.mean.values().iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
                prop_assert!(r.mean.values().iter().all(|&x| (0.0..=1.0).contains(&x)));
                prop_assert!((0.0..=0.5).contains(&r.variance));
            }
        }
    }
}
