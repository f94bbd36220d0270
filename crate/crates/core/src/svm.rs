//! Multi-class linear soft-margin SVM over the belief simplex, one affine
//! score per base-stock level.
//!
//! Base-stock levels partition the belief simplex into bands bounded by
//! hyperplanes (the lead-time demand CDF is linear in the belief), and the
//! bands are ordered by level. The classifier exploits that structure: one
//! binary soft-margin SVM per *threshold* — "level at least the next class"
//! against everything below, a linearly separable problem — and per-class
//! scores assembled as prefix sums of the threshold separators. The argmax
//! of the composed affine scores then selects the band. Plain per-class
//! one-vs-rest binaries cannot represent a middle band with a single
//! halfspace and misclassify heavily on banded labels; the threshold
//! decomposition has no such defect while keeping the same per-class
//! (weight, bias) shape and decision rule.
//!
//! Each binary problem minimizes `0.5 ||w||^2 + C * sum_i hinge_i` by dual
//! coordinate descent with seeded epoch shuffles, the bias handled as an
//! augmented feature. Deterministic given the seed.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::belief::BeliefVector;
use crate::error::{invalid, Result};

/// A training pair: a belief and the base-stock level that labels it.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBeliefSample {
    pub belief: BeliefVector,
    pub label: i64,
}

/// One-vs-rest linear separators mapping beliefs to base-stock levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ClassifierJson", into = "ClassifierJson")]
pub struct BasestockClassifier {
    /// Levels present in the training data, ascending.
    classes: Vec<i64>,
    /// Row-major `classes x dim`.
    weights: Vec<f64>,
    biases: Vec<f64>,
    c: f64,
    dim: usize,
}

impl BasestockClassifier {
    /// Assembles a classifier from explicit parameters.
    pub fn from_parts(
        classes: Vec<i64>,
        weights: Vec<f64>,
        biases: Vec<f64>,
        c: f64,
        dim: usize,
    ) -> Result<Self> {
        if classes.is_empty() {
            return Err(invalid("classifier needs at least one class"));
        }
        if !classes.windows(2).all(|w| w[0] < w[1]) {
            return Err(invalid("classes must be strictly ascending"));
        }
        if weights.len() != classes.len() * dim || biases.len() != classes.len() {
            return Err(invalid("weight/bias dimensions inconsistent with classes"));
        }
        if !(c > 0.0) {
            return Err(invalid("regularization parameter C must be positive"));
        }
        Ok(Self { classes, weights, biases, c, dim })
    }

    pub fn classes(&self) -> &[i64] {
        &self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Raw decision scores, one per class.
    pub fn decision_scores(&self, belief: &BeliefVector) -> Result<Vec<f64>> {
        if belief.len() != self.dim {
            return Err(invalid(format!(
                "belief has {} entries, classifier expects {}",
                belief.len(),
                self.dim
            )));
        }
        Ok(self
            .classes
            .iter()
            .enumerate()
            .map(|(k, _)| {
                let row = &self.weights[k * self.dim..(k + 1) * self.dim];
                dot(row, belief.probs()) + self.biases[k]
            })
            .collect())
    }

    /// The level whose separator scores highest; ties go to the smallest
    /// level.
    pub fn classify(&self, belief: &BeliefVector) -> Result<i64> {
        let scores = self.decision_scores(belief)?;
        let mut best = 0;
        for (k, &s) in scores.iter().enumerate().skip(1) {
            if s > scores[best] {
                best = k;
            }
        }
        Ok(self.classes[best])
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ClassifierJson {
    classes: Vec<i64>,
    weights: Vec<f64>,
    biases: Vec<f64>,
    #[serde(rename = "C")]
    c: f64,
}

impl From<BasestockClassifier> for ClassifierJson {
    fn from(c: BasestockClassifier) -> Self {
        ClassifierJson { classes: c.classes, weights: c.weights, biases: c.biases, c: c.c }
    }
}

impl TryFrom<ClassifierJson> for BasestockClassifier {
    type Error = crate::Error;

    fn try_from(j: ClassifierJson) -> Result<Self> {
        if j.classes.is_empty() || j.weights.len() % j.classes.len() != 0 {
            return Err(invalid("weights not divisible by number of classes"));
        }
        let dim = j.weights.len() / j.classes.len();
        BasestockClassifier::from_parts(j.classes, j.weights, j.biases, j.c, dim)
    }
}

/// Trains the multi-class classifier: one binary soft-margin SVM per
/// threshold between adjacent levels present in `samples`, composed into
/// per-class scores by prefix sums.
///
/// Deterministic given the seed: epoch shuffles come from a seeded
/// generator, and threshold problems are independent. A binary problem
/// runs dual coordinate descent for at most `max_epochs` passes, stopping
/// early once its largest projected-gradient violation falls below `tol`.
/// Each returned separator's regularized hinge objective never exceeds
/// that of the zero classifier.
pub fn train_ovr(
    samples: &[LabeledBeliefSample],
    c: f64,
    max_epochs: usize,
    tol: f64,
    seed: u64,
) -> Result<BasestockClassifier> {
    if samples.is_empty() {
        return Err(invalid("training data must be non-empty"));
    }
    if !(c > 0.0) {
        return Err(invalid("regularization parameter C must be positive"));
    }
    if max_epochs == 0 {
        return Err(invalid("max_epochs must be at least 1"));
    }
    let dim = samples[0].belief.len();
    if samples.iter().any(|s| s.belief.len() != dim) {
        return Err(invalid("samples of mixed belief dimension"));
    }
    let classes: Vec<i64> = samples
        .iter()
        .map(|s| s.label)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut weights = vec![0.0; classes.len() * dim];
    let mut biases = vec![0.0; classes.len()];
    // A single class needs no separator; the empty prefix already wins.
    for m in 1..classes.len() {
        let targets: Vec<f64> = samples
            .iter()
            .map(|s| if s.label >= classes[m] { 1.0 } else { -1.0 })
            .collect();
        let (w, b) = train_binary(
            samples,
            &targets,
            c,
            max_epochs,
            tol,
            seed.wrapping_add(m as u64),
        );
        // Prefix-sum composition: s_k = sum of the first k threshold scores.
        let previous_w = weights[(m - 1) * dim..m * dim].to_vec();
        for (d, (&prev, &wv)) in previous_w.iter().zip(&w).enumerate() {
            weights[m * dim + d] = prev + wv;
        }
        biases[m] = biases[m - 1] + b;
    }
    BasestockClassifier::from_parts(classes, weights, biases, c, dim)
}

/// Primal objective `0.5 ||w||^2 + C sum hinge`.
fn primal_objective(
    samples: &[LabeledBeliefSample],
    targets: &[f64],
    w: &[f64],
    b: f64,
    c: f64,
) -> f64 {
    let reg = 0.5 * dot(w, w);
    let hinge: f64 = samples
        .iter()
        .zip(targets)
        .map(|(s, &t)| (1.0 - t * (dot(w, s.belief.probs()) + b)).max(0.0))
        .sum();
    reg + c * hinge
}

/// Dual coordinate descent on the binary hinge SVM, with the bias carried
/// as an augmented unit feature. Maintains the primal vector alongside the
/// dual variables; one coordinate update has a closed form.
fn train_binary(
    samples: &[LabeledBeliefSample],
    targets: &[f64],
    c: f64,
    max_epochs: usize,
    tol: f64,
    seed: u64,
) -> (Vec<f64>, f64) {
    let n = samples.len();
    let dim = samples[0].belief.len();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let sq_norm: Vec<f64> = samples
        .iter()
        .map(|s| dot(s.belief.probs(), s.belief.probs()) + 1.0)
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = StdRng::seed_from_u64(seed);
    for _ in 0..max_epochs {
        order.shuffle(&mut rng);
        let mut worst_violation = 0.0f64;
        for &i in &order {
            let x = samples[i].belief.probs();
            let t = targets[i];
            let grad = t * (dot(&w, x) + b) - 1.0;
            let projected = if alpha[i] <= 0.0 {
                grad.min(0.0)
            } else if alpha[i] >= c {
                grad.max(0.0)
            } else {
                grad
            };
            worst_violation = worst_violation.max(projected.abs());
            if projected != 0.0 {
                let updated = (alpha[i] - grad / sq_norm[i]).clamp(0.0, c);
                let delta = updated - alpha[i];
                if delta != 0.0 {
                    alpha[i] = updated;
                    for (wv, &xv) in w.iter_mut().zip(x) {
                        *wv += delta * t * xv;
                    }
                    b += delta * t;
                }
            }
        }
        if worst_violation < tol {
            break;
        }
    }
    // The zero classifier is the fallback the result must not lose to.
    if primal_objective(samples, targets, &w, b, c)
        > primal_objective(samples, targets, &vec![0.0; dim], 0.0, c)
    {
        return (vec![0.0; dim], 0.0);
    }
    (w, b)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// All barycentric lattice points of the `(dim-1)`-simplex at the given
/// resolution, in lexicographic order of their integer compositions.
pub fn simplex_mesh(dim: usize, resolution: usize) -> Vec<BeliefVector> {
    assert!(dim >= 1 && resolution >= 1);
    let mut out = Vec::new();
    let mut counts = vec![0usize; dim];
    fill_compositions(resolution, 0, &mut counts, &mut out, resolution);
    out
}

fn fill_compositions(
    remaining: usize,
    index: usize,
    counts: &mut Vec<usize>,
    out: &mut Vec<BeliefVector>,
    resolution: usize,
) {
    if index == counts.len() - 1 {
        counts[index] = remaining;
        let probs: Vec<f64> = counts.iter().map(|&k| k as f64 / resolution as f64).collect();
        out.push(BeliefVector::new(probs).expect("lattice point is a distribution"));
        return;
    }
    for k in 0..=remaining {
        counts[index] = k;
        fill_compositions(remaining - k, index + 1, counts, out, resolution);
    }
}

/// Labels of a classifier across a simplex mesh, with per-class counts.
#[derive(Debug, Clone)]
pub struct PartitionReport {
    pub resolution: usize,
    pub rows: Vec<(BeliefVector, i64)>,
    pub counts: BTreeMap<i64, usize>,
}

/// Evaluates the classifier on a barycentric mesh of the belief simplex.
pub fn partition_report(
    classifier: &BasestockClassifier,
    resolution: usize,
) -> Result<PartitionReport> {
    if resolution < 2 {
        return Err(invalid("mesh resolution must be at least 2"));
    }
    let mesh = simplex_mesh(classifier.dim(), resolution);
    let mut rows = Vec::with_capacity(mesh.len());
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for point in mesh {
        let label = classifier.classify(&point)?;
        *counts.entry(label).or_default() += 1;
        rows.push((point, label));
    }
    Ok(PartitionReport { resolution, rows, counts })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(probs: Vec<f64>, label: i64) -> LabeledBeliefSample {
        LabeledBeliefSample { belief: BeliefVector::new(probs).unwrap(), label }
    }

    #[test]
    fn separable_clusters_are_classified_exactly() {
        let mut samples = Vec::new();
        // Two clusters near opposite corners of the 2-simplex.
        for i in 0..20 {
            let eps = i as f64 * 0.004;
            samples.push(sample(vec![0.9 - eps, 0.05 + eps / 2.0, 0.05 + eps / 2.0], 4));
            samples.push(sample(vec![0.05 + eps / 2.0, 0.05 + eps / 2.0, 0.9 - eps], 9));
        }
        let clf = train_ovr(&samples, 50.0, 400, 1e-10, 3).unwrap();
        for s in &samples {
            assert_eq!(clf.classify(&s.belief).unwrap(), s.label);
        }
    }

    #[test]
    fn single_label_data_predicts_that_label_everywhere() {
        let samples = vec![
            sample(vec![0.2, 0.8], 6),
            sample(vec![0.9, 0.1], 6),
        ];
        let clf = train_ovr(&samples, 10.0, 50, 1e-8, 0).unwrap();
        assert_eq!(clf.classes(), &[6]);
        for b in [vec![0.5, 0.5], vec![0.0, 1.0]] {
            assert_eq!(clf.classify(&BeliefVector::new(b).unwrap()).unwrap(), 6);
        }
    }

    #[test]
    fn ties_resolve_to_the_smaller_level() {
        let clf = BasestockClassifier::from_parts(
            vec![3, 7],
            vec![1.0, -1.0, 1.0, -1.0],
            vec![0.5, 0.5],
            1.0,
            2,
        )
        .unwrap();
        let boundary = BeliefVector::new(vec![0.5, 0.5]).unwrap();
        let scores = clf.decision_scores(&boundary).unwrap();
        assert!((scores[0] - scores[1]).abs() < 1e-15);
        assert_eq!(clf.classify(&boundary).unwrap(), 3);
    }

    #[test]
    fn classify_matches_exhaustive_score_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(77);
        for _ in 0..50 {
            let n_classes = rng.gen_range(2..6);
            let dim = rng.gen_range(2..5);
            let classes: Vec<i64> = (0..n_classes as i64).map(|k| k * 2 + 1).collect();
            let weights: Vec<f64> =
                (0..n_classes * dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let biases: Vec<f64> = (0..n_classes).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let clf = BasestockClassifier::from_parts(
                classes.clone(),
                weights,
                biases,
                5.0,
                dim,
            )
            .unwrap();
            let b = BeliefVector::from_weights(
                (0..dim).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect(),
            )
            .unwrap();
            let scores = clf.decision_scores(&b).unwrap();
            let mut want = 0;
            for (k, &s) in scores.iter().enumerate() {
                if s > scores[want] {
                    want = k;
                }
            }
            assert_eq!(clf.classify(&b).unwrap(), classes[want]);
        }
    }

    proptest::proptest! {
        // Argmax over affine scores is invariant to a common positive
        // rescaling of every (weight, bias) pair.
        #[test]
        fn classification_is_scale_invariant(
            seed in proptest::prelude::any::<u64>(),
            scale in 1e-3..1e3f64,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
            let clf = BasestockClassifier::from_parts(
                vec![2, 5, 9],
                (0..9).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                10.0,
                3,
            )
            .unwrap();
            let scaled = BasestockClassifier::from_parts(
                clf.classes().to_vec(),
                clf.weights.iter().map(|w| w * scale).collect(),
                clf.biases.iter().map(|b| b * scale).collect(),
                10.0,
                3,
            )
            .unwrap();
            for _ in 0..20 {
                let b = BeliefVector::from_weights(
                    (0..3).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect(),
                )
                .unwrap();
                proptest::prop_assert_eq!(clf.classify(&b).unwrap(), scaled.classify(&b).unwrap());
            }
        }
    }

    #[test]
    fn training_is_deterministic_in_bytes() {
        let samples = vec![
            sample(vec![0.8, 0.1, 0.1], 2),
            sample(vec![0.1, 0.8, 0.1], 4),
            sample(vec![0.1, 0.1, 0.8], 8),
            sample(vec![0.6, 0.2, 0.2], 2),
            sample(vec![0.2, 0.6, 0.2], 4),
        ];
        let a = train_ovr(&samples, 25.0, 120, 1e-10, 9).unwrap();
        let b = train_ovr(&samples, 25.0, 120, 1e-10, 9).unwrap();
        assert_eq!(a.to_json_string().unwrap(), b.to_json_string().unwrap());
    }

    #[test]
    fn classifier_json_round_trip() {
        let clf = BasestockClassifier::from_parts(
            vec![4, 6],
            vec![0.25, -0.5, 1.0, 0.0],
            vec![0.125, -0.75],
            50.0,
            2,
        )
        .unwrap();
        let s = clf.to_json_string().unwrap();
        let back = BasestockClassifier::from_json_str(&s).unwrap();
        assert_eq!(clf, back);
        assert_eq!(s, back.to_json_string().unwrap());
    }

    #[test]
    fn partition_report_counts_cover_the_mesh() {
        let single = BasestockClassifier::from_parts(vec![5], vec![0.0; 3], vec![0.0], 1.0, 3)
            .unwrap();
        let report = partition_report(&single, 10).unwrap();
        let mesh_size = simplex_mesh(3, 10).len();
        assert_eq!(report.rows.len(), mesh_size);
        assert_eq!(report.counts.len(), 1);
        assert_eq!(report.counts[&5], mesh_size);
        // C(10 + 2, 2) lattice points on the 2-simplex.
        assert_eq!(mesh_size, 66);
    }

    #[test]
    fn rejects_empty_or_bad_input() {
        assert!(train_ovr(&[], 1.0, 10, 1e-6, 0).is_err());
        let s = vec![sample(vec![0.5, 0.5], 1)];
        assert!(train_ovr(&s, -1.0, 10, 1e-6, 0).is_err());
        let clf = train_ovr(&s, 1.0, 10, 1e-6, 0).unwrap();
        assert!(clf.classify(&BeliefVector::uniform(3)).is_err());
    }
}
