//! Baum-Welch (EM) training of the discrete joint-emission HMM.
//!
//! Training is unsupervised: the data are observation sequences only, and
//! the supports are taken to be the values observed in the data. The prior
//! over the initial latent state is held fixed at uniform — the model type
//! carries no initial distribution, and keeping it out of the M-step
//! preserves the EM monotonicity guarantee for the remaining parameters.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::belief::BeliefVector;
use crate::error::{invalid, Result};
use crate::hmm::{EmissionConvention, HiddenMarkovModel, ObservationSequence};

/// Default absolute log-likelihood improvement below which EM stops.
pub const DEFAULT_EM_TOL: f64 = 1e-6;
/// Default iteration cap.
pub const DEFAULT_EM_MAX_ITERS: usize = 500;

/// Fits an `n_states` HMM to observation-only data by EM.
///
/// Initialization draws every transition row and per-state emission PMF
/// from a flat Dirichlet, deterministically from `seed`. Returns the fitted
/// model together with the log-likelihood trace, one entry per E-step; the
/// trace is non-decreasing up to floating-point error. Training stops when
/// the absolute improvement drops below `tol` or after `max_iters` update
/// steps.
pub fn baum_welch(
    data: &[ObservationSequence],
    n_states: usize,
    seed: u64,
    tol: f64,
    max_iters: usize,
    convention: EmissionConvention,
) -> Result<(HiddenMarkovModel, Vec<f64>)> {
    if data.is_empty() || data.iter().any(|d| d.is_empty()) {
        return Err(invalid("training data must contain non-empty sequences"));
    }
    if n_states == 0 {
        return Err(invalid("n_states must be at least 1"));
    }
    let y_support = observed_support(data.iter().map(|d| d.demands.iter()));
    let x_support = observed_support(data.iter().map(|d| d.aods.iter()));
    let mut rng = StdRng::seed_from_u64(seed);
    let n_obs = y_support.len() * x_support.len();
    let transition = dirichlet_rows(n_states, n_states, &mut rng);
    let emission = dirichlet_rows(n_states, n_obs, &mut rng);
    let mut model = HiddenMarkovModel::new(
        transition,
        emission,
        y_support,
        x_support,
        convention,
    )?;
    refine(&mut model, data, tol, max_iters).map(|trace| (model, trace))
}

/// Runs [`baum_welch`] once per seed and keeps the fit with the best final
/// log-likelihood. Returns the winning model, its trace, and the index of
/// the winning seed.
pub fn baum_welch_restarts(
    data: &[ObservationSequence],
    n_states: usize,
    seeds: &[u64],
    tol: f64,
    max_iters: usize,
    convention: EmissionConvention,
) -> Result<(HiddenMarkovModel, Vec<f64>, usize)> {
    if seeds.is_empty() {
        return Err(invalid("at least one restart seed is required"));
    }
    let mut best: Option<(HiddenMarkovModel, Vec<f64>, usize)> = None;
    for (idx, &seed) in seeds.iter().enumerate() {
        let (model, trace) = baum_welch(data, n_states, seed, tol, max_iters, convention)?;
        let final_ll = *trace.last().expect("trace is never empty");
        let better = match &best {
            None => true,
            Some((_, t, _)) => final_ll > *t.last().unwrap(),
        };
        if better {
            best = Some((model, trace, idx));
        }
    }
    Ok(best.unwrap())
}

/// Continues EM from an existing parameter point. Exposed so tests can
/// verify the fixed-point property at exact parameters.
pub fn refine(
    model: &mut HiddenMarkovModel,
    data: &[ObservationSequence],
    tol: f64,
    max_iters: usize,
) -> Result<Vec<f64>> {
    if data.is_empty() || data.iter().any(|d| d.is_empty()) {
        return Err(invalid("training data must contain non-empty sequences"));
    }
    let mut trace = Vec::new();
    for iteration in 0..=max_iters {
        let stats = e_step(model, data)?;
        trace.push(stats.log_likelihood);
        if iteration > 0 {
            let improvement = trace[iteration] - trace[iteration - 1];
            if improvement < tol {
                break;
            }
        }
        if iteration == max_iters {
            break;
        }
        *model = m_step(model, &stats)?;
    }
    Ok(trace)
}

struct SufficientStats {
    log_likelihood: f64,
    /// Expected transition counts, row-major.
    transition: Vec<f64>,
    /// Expected emission counts per designated state, row-major over pairs.
    emission: Vec<f64>,
}

fn e_step(model: &HiddenMarkovModel, data: &[ObservationSequence]) -> Result<SufficientStats> {
    let n = model.n_states();
    let n_obs = model.y_support().len() * model.x_support().len();
    let nx = model.x_support().len();
    let uniform = BeliefVector::uniform(n);
    let mut stats = SufficientStats {
        log_likelihood: 0.0,
        transition: vec![0.0; n * n],
        emission: vec![0.0; n * n_obs],
    };
    for seq in data {
        let t_len = seq.len();
        let pair_indices: Vec<usize> = seq
            .demands
            .iter()
            .zip(&seq.aods)
            .map(|(&y, &x)| {
                let yi = model
                    .y_index(y)
                    .ok_or(crate::Error::ImpossibleObservation { y, x })?;
                let xi = model
                    .x_index(x)
                    .ok_or(crate::Error::ImpossibleObservation { y, x })?;
                Ok(yi * nx + xi)
            })
            .collect::<Result<_>>()?;
        // Scaled forward pass over the chain u_0..u_T; the observation at
        // step t is emitted by the designated element of (u_{t-1}, u_t).
        let mut alphas = Vec::with_capacity(t_len + 1);
        let mut scales = Vec::with_capacity(t_len);
        alphas.push(uniform.probs().to_vec());
        for t in 0..t_len {
            let mut next = vec![0.0; n];
            for u in 0..n {
                let au = alphas[t][u];
                if au == 0.0 {
                    continue;
                }
                for u2 in 0..n {
                    next[u2] += au
                        * model.transition_prob(u, u2)
                        * emit_prob(model, u, u2, pair_indices[t]);
                }
            }
            let scale: f64 = next.iter().sum();
            if !(scale > 0.0) {
                return Err(crate::Error::ImpossibleObservation {
                    y: seq.demands[t],
                    x: seq.aods[t],
                });
            }
            for v in &mut next {
                *v /= scale;
            }
            stats.log_likelihood += scale.ln();
            scales.push(scale);
            alphas.push(next);
        }
        // Scaled backward pass.
        let mut beta = vec![1.0; n];
        for t in (0..t_len).rev() {
            // Pairwise posteriors xi_t(u, u') for the step emitting obs t.
            let mut xi = vec![0.0; n * n];
            let mut xi_total = 0.0;
            for u in 0..n {
                let au = alphas[t][u];
                if au == 0.0 {
                    continue;
                }
                for u2 in 0..n {
                    let w = au
                        * model.transition_prob(u, u2)
                        * emit_prob(model, u, u2, pair_indices[t])
                        * beta[u2];
                    xi[u * n + u2] = w;
                    xi_total += w;
                }
            }
            if xi_total > 0.0 {
                for u in 0..n {
                    for u2 in 0..n {
                        let w = xi[u * n + u2] / xi_total;
                        stats.transition[u * n + u2] += w;
                        let designated = match model.convention() {
                            EmissionConvention::ConditionOnNext => u2,
                            EmissionConvention::ConditionOnCurrent => u,
                        };
                        stats.emission[designated * n_obs + pair_indices[t]] += w;
                    }
                }
            }
            let mut prev = vec![0.0; n];
            for u in 0..n {
                let mut acc = 0.0;
                for u2 in 0..n {
                    acc += model.transition_prob(u, u2)
                        * emit_prob(model, u, u2, pair_indices[t])
                        * beta[u2];
                }
                prev[u] = acc / scales[t];
            }
            beta = prev;
        }
    }
    Ok(stats)
}

fn m_step(model: &HiddenMarkovModel, stats: &SufficientStats) -> Result<HiddenMarkovModel> {
    let n = model.n_states();
    let n_obs = model.y_support().len() * model.x_support().len();
    let transition = normalize_rows_or_keep(&stats.transition, n, |u, u2| {
        model.transition_prob(u, u2)
    });
    let nx = model.x_support().len();
    let emission = normalize_rows_or_keep(&stats.emission, n_obs, |u, pair| {
        model.emission_prob(u, pair / nx, pair % nx)
    });
    HiddenMarkovModel::new(
        transition,
        emission,
        model.y_support().to_vec(),
        model.x_support().to_vec(),
        model.convention(),
    )
}

#[inline]
fn emit_prob(model: &HiddenMarkovModel, u: usize, u2: usize, pair: usize) -> f64 {
    let nx = model.x_support().len();
    let designated = match model.convention() {
        EmissionConvention::ConditionOnNext => u2,
        EmissionConvention::ConditionOnCurrent => u,
    };
    model.emission_prob(designated, pair / nx, pair % nx)
}

/// Normalizes each row of expected counts; a row with no mass (a state the
/// posterior never visited) keeps its previous parameters.
fn normalize_rows_or_keep(
    counts: &[f64],
    width: usize,
    previous: impl Fn(usize, usize) -> f64,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(counts.len());
    for (row_idx, row) in counts.chunks(width).enumerate() {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            out.extend(row.iter().map(|c| c / total));
        } else {
            out.extend((0..width).map(|col| previous(row_idx, col)));
        }
    }
    out
}

fn observed_support<'a>(
    values: impl Iterator<Item = std::slice::Iter<'a, i64>>,
) -> Vec<i64> {
    let mut set = std::collections::BTreeSet::new();
    for seq in values {
        set.extend(seq.copied());
    }
    set.into_iter().collect()
}

fn dirichlet_rows(rows: usize, width: usize, rng: &mut StdRng) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * width);
    for _ in 0..rows {
        // Flat Dirichlet via normalized unit exponentials.
        let weights: Vec<f64> = (0..width).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let total: f64 = weights.iter().sum();
        out.extend(weights.iter().map(|w| w / total));
    }
    out
}
