//! Finite belief grids built from simulated filter trajectories.
//!
//! Because learning is passive in a separable POMDP, the reachable region
//! of the belief simplex can be mapped out ahead of time: simulate the
//! observation process, run the filter, round the visited beliefs to `d`
//! digits, and keep the `K` most frequently visited rounding cells. The
//! representative of each cell is the visit-weighted mean of its members
//! (renormalized), so downstream predictive and update operators always
//! receive valid distributions — the floor-rounded labels themselves are
//! sub-stochastic and are used only as grouping keys.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::belief::BeliefVector;
use crate::error::{invalid, Result};
use crate::hmm::HiddenMarkovModel;

/// A finite set of representative beliefs with nearest-point lookup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefGrid {
    /// Rounding digits (mesh parameter).
    pub d: u32,
    /// Cardinality cap.
    #[serde(rename = "K")]
    pub cap: usize,
    points: Vec<BeliefVector>,
    visit_counts: Vec<u64>,
}

impl BeliefGrid {
    pub fn points(&self) -> &[BeliefVector] {
        &self.points
    }

    pub fn visit_counts(&self) -> &[u64] {
        &self.visit_counts
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let grid: BeliefGrid = serde_json::from_str(s)?;
        if grid.points.is_empty() || grid.points.len() != grid.visit_counts.len() {
            return Err(invalid("grid points and visit counts are inconsistent"));
        }
        Ok(grid)
    }
}

/// Simulates the filter for `n_steps` observations of the model and returns
/// the visited beliefs `b_1 ... b_N`. Learning is passive: no actions are
/// involved, so one long run suffices for an ergodic chain.
pub fn simulate_belief_trajectory(
    model: &HiddenMarkovModel,
    b0: &BeliefVector,
    n_steps: usize,
    seed: u64,
) -> Result<Vec<BeliefVector>> {
    if n_steps == 0 {
        return Err(invalid("n_steps must be at least 1"));
    }
    let traj = model.sample_trajectory(b0, n_steps, seed)?;
    let mut beliefs = Vec::with_capacity(n_steps);
    let mut belief = b0.clone();
    for (&y, &x) in traj.demands.iter().zip(&traj.aods) {
        belief = model.lambda_update(&belief, y, x)?;
        beliefs.push(belief.clone());
    }
    Ok(beliefs)
}

/// Componentwise floor of a belief to `d` digits. The result may sum to
/// less than one; it is a cell label, never a distribution.
pub fn round_belief(b: &BeliefVector, d: u32) -> Vec<f64> {
    let factor = 10f64.powi(d as i32);
    b.probs().iter().map(|p| (p * factor).floor() / factor).collect()
}

/// Exact grouping key for the floor-rounding: integer multiples of 10^-d.
fn round_key(b: &BeliefVector, d: u32) -> Vec<i64> {
    let factor = 10f64.powi(d as i32);
    b.probs().iter().map(|p| (p * factor).floor() as i64).collect()
}

/// Groups beliefs by their `d`-digit rounding cell and keeps the `cap` most
/// visited cells. Ties in visit count break lexicographically on the cell
/// label; the representative of a cell is the mean of its members,
/// renormalized.
pub fn build_grid(beliefs: &[BeliefVector], d: u32, cap: usize) -> Result<BeliefGrid> {
    if beliefs.is_empty() {
        return Err(invalid("cannot build a grid from zero beliefs"));
    }
    if cap == 0 {
        return Err(invalid("cardinality cap must be at least 1"));
    }
    if d == 0 {
        return Err(invalid("rounding digits must be at least 1"));
    }
    let dim = beliefs[0].len();
    let mut cells: BTreeMap<Vec<i64>, (u64, Vec<f64>)> = BTreeMap::new();
    for b in beliefs {
        if b.len() != dim {
            return Err(invalid("beliefs of mixed dimension"));
        }
        let entry = cells
            .entry(round_key(b, d))
            .or_insert_with(|| (0, vec![0.0; dim]));
        entry.0 += 1;
        for (acc, &p) in entry.1.iter_mut().zip(b.probs()) {
            *acc += p;
        }
    }
    let mut groups: Vec<(Vec<i64>, u64, Vec<f64>)> =
        cells.into_iter().map(|(k, (n, sum))| (k, n, sum)).collect();
    // Most visited first; equal counts in lexicographic label order (the
    // BTreeMap iteration order, which the stable sort preserves).
    groups.sort_by(|a, b| b.1.cmp(&a.1));
    groups.truncate(cap);
    let mut points = Vec::with_capacity(groups.len());
    let mut visit_counts = Vec::with_capacity(groups.len());
    for (_, count, sum) in groups {
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        points.push(BeliefVector::from_weights(mean)?);
        visit_counts.push(count);
    }
    Ok(BeliefGrid { d, cap, points, visit_counts })
}

/// Index of the grid point closest to `b` in sup-norm; ties go to the
/// smallest index.
pub fn nearest_grid_point(grid: &BeliefGrid, b: &BeliefVector) -> usize {
    assert!(!grid.is_empty(), "grid must be non-empty");
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, p) in grid.points.iter().enumerate() {
        let dist = p.sup_distance(b);
        if dist < best_dist {
            best = i;
            best_dist = dist;
        }
    }
    best
}
