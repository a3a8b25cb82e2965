use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total probability mass of a validated vector.
pub const POSTERIOR_SUM_TOLERANCE: f64 = 1e-6;

/// Per-class probabilities for one sample from one classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PosteriorVector(Vec<f64>);

impl PosteriorVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidPosterior("no classes".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidPosterior(format!("probability {p} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > POSTERIOR_SUM_TOLERANCE {
            return Err(Error::InvalidPosterior(format!("probabilities sum to {sum}")));
        }
        Ok(PosteriorVector(probs))
    }

    /// Wraps probabilities already known to be valid, e.g. a softmax output.
    pub(crate) fn from_normalized(probs: Vec<f64>) -> Self {
        debug_assert!(PosteriorVector::new(probs.clone()).is_ok(), "{probs:?}");
        PosteriorVector(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn class_count(&self) -> usize {
        self.0.len()
    }

    pub fn argmax(&self) -> usize {
        argmax_class(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for PosteriorVector {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        PosteriorVector::new(probs)
    }
}

impl From<PosteriorVector> for Vec<f64> {
    fn from(p: PosteriorVector) -> Self {
        p.0
    }
}

impl AsRef<[f64]> for PosteriorVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Index of the largest score; ties go to the lowest index.
///
/// Accepts unnormalized score lists as well as posteriors. An empty slice
/// yields 0.
pub fn argmax_class(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax_class(&[0.2, 0.8]), 1);
        assert_eq!(argmax_class(&[0.5, 0.5]), 0);
        assert_eq!(argmax_class(&[0.1, 0.3, 0.3, 0.3]), 1);
    }

    #[test]
    fn rejects_bad_vectors() {
        assert!(PosteriorVector::new(vec![0.5, 0.4]).is_err());
        assert!(PosteriorVector::new(vec![1.2, -0.2]).is_err());
        assert!(PosteriorVector::new(vec![]).is_err());
        assert!(PosteriorVector::new(vec![0.25; 4]).is_ok());
    }

    fn scan_oracle(v: &[f64]) -> usize {
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        v.iter().position(|&x| x == max).unwrap()
    }

    proptest! {
        #[test]
        fn argmax_matches_scan(v in prop::collection::vec(0.0f64..1.0, 8)) {
            prop_assert_eq!(argmax_class(&v), scan_oracle(&v));
        }

        #[test]
        fn argmax_scale_invariant(
            v in prop::collection::vec(0u32..20, 1..10),
            c in 0.01f64..100.0,
        ) {
            // small integer grid forces plenty of ties
            let raw: Vec<f64> = v.iter().map(|&x| x as f64).collect();
            let scaled: Vec<f64> = raw.iter().map(|x| x * c).collect();
            prop_assert_eq!(argmax_class(&raw), argmax_class(&scaled));
        }
    }
}
