//! Belief vectors over the latent modulation states.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Tolerance on the total-mass invariant of a belief vector.
pub const BELIEF_SUM_TOL: f64 = 1e-9;

/// A probability distribution over latent modulation states: the filter
/// state `b_t`.
///
/// Invariants: every entry lies in `[0, 1]` and the entries sum to one
/// within [`BELIEF_SUM_TOL`]. Construction through [`BeliefVector::new`]
/// enforces both; floating-point dust outside `[0, 1]` by less than 1e-12
/// is clamped rather than rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BeliefVector {
    probs: Vec<f64>,
}

impl BeliefVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("belief vector must be non-empty"));
        }
        let mut sum = 0.0;
        for &p in &probs {
            if !p.is_finite() || p < -1e-12 || p > 1.0 + 1e-12 {
                return Err(invalid(format!("belief entry {p} outside [0, 1]")));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > BELIEF_SUM_TOL {
            return Err(invalid(format!("belief entries sum to {sum}, expected 1")));
        }
        let probs = probs.into_iter().map(|p| p.clamp(0.0, 1.0)).collect();
        Ok(Self { probs })
    }

    /// Uniform belief over `n` states.
    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "belief dimension must be positive");
        Self { probs: vec![1.0 / n as f64; n] }
    }

    /// All mass on a single state.
    pub fn degenerate(n: usize, state: usize) -> Self {
        assert!(state < n, "state index out of range");
        let mut probs = vec![0.0; n];
        probs[state] = 1.0;
        Self { probs }
    }

    /// Construction path for internally computed posteriors: renormalizes
    /// non-negative weights. Fails on an all-zero weight vector.
    pub(crate) fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(invalid("belief weights must have positive finite total"));
        }
        let probs = weights.into_iter().map(|w| (w / total).clamp(0.0, 1.0)).collect();
        Ok(Self { probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, state: usize) -> f64 {
        self.probs[state]
    }

    /// Sup-norm distance to another belief of the same dimension.
    pub fn sup_distance(&self, other: &BeliefVector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<f64>> for BeliefVector {
    type Error = crate::Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<BeliefVector> for Vec<f64> {
    fn from(b: BeliefVector) -> Self {
        b.probs
    }
}
