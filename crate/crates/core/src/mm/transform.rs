//! Log-odds transform of probability vectors into the merged latent space.

use serde::{Deserialize, Serialize};

use crate::error::MmError;
use crate::types::ProbVector;

pub const DEFAULT_CLAMP: f64 = 1e-6;

/// Concatenated log-odds of all ensemble members, model-major: the `m - 1`
/// coordinates of the first model come first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentVector(Vec<f64>);

impl LatentVector {
    pub fn new(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for LatentVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// `u_j = ln(p_j / p_m)` against the last class, after clamping every entry to
/// `[delta, 1 - delta]` and renormalizing.
pub fn logodds_transform(p: &ProbVector, delta: f64) -> Vec<f64> {
    debug_assert!(delta > 0.0 && delta < 0.5);
    let clamped: Vec<f64> = p.values().iter().map(|&x| x.clamp(delta, 1.0 - delta)).collect();
    let total: f64 = clamped.iter().sum();
    let reference = clamped[clamped.len() - 1] / total;
    clamped[..clamped.len() - 1]
        .iter()
        .map(|&x| (x / total / reference).ln())
        .collect()
}

/// Inverse of [`logodds_transform`]: softmax with an implicit zero logit for
/// the reference class.
pub fn inverse_logodds(u: &[f64]) -> ProbVector {
    let max = u.iter().copied().fold(0.0f64, f64::max);
    let mut exps: Vec<f64> = u.iter().map(|&x| (x - max).exp()).collect();
    exps.push((-max).exp());
    let total: f64 = exps.iter().sum();
    ProbVector::from_normalized(exps.into_iter().map(|e| e / total).collect())
}

/// Transforms one frame row (`r` member predictions, in frame model order).
pub fn merge_predictions(
    row: &[ProbVector],
    num_models: usize,
    delta: f64,
) -> Result<LatentVector, MmError> {
    if row.len() != num_models {
        return Err(MmError::ArityMismatch {
            expected: num_models,
            found: row.len(),
        });
    }
    Ok(LatentVector(
        row.iter().flat_map(|p| logodds_transform(p, delta)).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn p(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec(), v.len()).unwrap()
    }

    #[test]
    fn binary_examples() {
        assert_abs_diff_eq!(logodds_transform(&p(&[0.9, 0.1]), 1e-6)[0], 9f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(logodds_transform(&p(&[0.5, 0.5]), 1e-6)[0], 0.0);
        let u = logodds_transform(&p(&[1.0, 0.0]), 1e-6)[0];
        assert_abs_diff_eq!(u, 999_999f64.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(u, 13.8155, epsilon = 1e-4);
    }

    #[test]
    fn merge_is_model_major() {
        let row = [p(&[0.9, 0.1]), p(&[0.5, 0.5]), p(&[0.27, 0.73])];
        let u = merge_predictions(&row, 3, 1e-6).unwrap();
        assert_eq!(u.dim(), 3);
        assert_abs_diff_eq!(u.values()[0], 2.1972246, epsilon = 1e-6);
        assert_abs_diff_eq!(u.values()[1], 0.0);
        assert_abs_diff_eq!(u.values()[2], -0.99462, epsilon = 1e-5);

        let single = merge_predictions(&row[..1], 1, 1e-6).unwrap();
        assert_eq!(single.values(), logodds_transform(&row[0], 1e-6).as_slice());

        assert_eq!(
            merge_predictions(&row[..2], 3, 1e-6),
            Err(MmError::ArityMismatch { expected: 3, found: 2 })
        );
    }

    #[test]
    fn multiclass_layout() {
        let row = [p(&[0.2, 0.3, 0.5]), p(&[0.6, 0.2, 0.2])];
        let u = merge_predictions(&row, 2, 1e-6).unwrap();
        let expect = [(0.2f64 / 0.5).ln(), (0.3f64 / 0.5).ln(), 3f64.ln(), 0.0];
        for (a, b) in u.values().iter().zip(expect) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn roundtrip_inside_clamp(raw in proptest::collection::vec(0.05f64..1.0, 2..5)) {
            let total: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let delta = 1e-6;
            prop_assume!(probs.iter().all(|&x| x >= delta && x <= 1.0 - delta));
            let pv = ProbVector::new(probs.clone(), probs.len()).unwrap();
            let back = inverse_logodds(&logodds_transform(&pv, delta));
            for (a, b) in back.values().iter().zip(&probs) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn transform_is_total(a in 0.0f64..=1.0) {
            let pv = ProbVector::new(vec![a, 1.0 - a], 2).unwrap();
            prop_assert!(logodds_transform(&pv, 1e-6)[0].is_finite());
        }
    }
}
