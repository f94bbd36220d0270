//! Shared fixtures and independent oracles for the integration suites.
//!
//! The oracles here deliberately avoid the library's own recursions:
//! likelihoods and posteriors come from explicit enumeration over every
//! latent path, and base-stock levels from exhaustive cost scans.

use rand::rngs::StdRng;
use rand::Rng;

use sep_pomdp_core::hmm::{EmissionConvention, HiddenMarkovModel, ObservationSequence};
use sep_pomdp_core::inventory::{newsvendor_expected_cost, TauDemandDistribution};
use sep_pomdp_core::BeliefVector;

/// Three latent states with independent demand/AOD emissions conditioned
/// on the current state; demand support {1..5}, AOD support {1..3}.
pub fn banded_partition_model() -> HiddenMarkovModel {
    let u = vec![
        0.75, 0.125, 0.125, //
        0.125, 0.75, 0.125, //
        0.125, 0.125, 0.75,
    ];
    let q = [
        [0.9, 0.05, 0.05],
        [0.05, 0.9, 0.05],
        [0.05, 0.05, 0.9],
    ];
    let y = [
        [0.75, 0.1, 0.05, 0.05, 0.05],
        [0.05, 0.075, 0.75, 0.075, 0.05],
        [0.05, 0.05, 0.05, 0.1, 0.75],
    ];
    let mut emission = Vec::new();
    for s in 0..3 {
        for yi in 0..5 {
            for xi in 0..3 {
                emission.push(y[s][yi] * q[s][xi]);
            }
        }
    }
    HiddenMarkovModel::new(
        u,
        emission,
        vec![1, 2, 3, 4, 5],
        vec![1, 2, 3],
        EmissionConvention::ConditionOnCurrent,
    )
    .unwrap()
}

/// Three latent states with discretized bivariate-normal emissions over
/// (demand, AOD), conditioned on the entered state.
pub fn three_state_gaussian_model() -> HiddenMarkovModel {
    HiddenMarkovModel::from_gaussian_emissions(
        vec![
            0.7, 0.2, 0.1, //
            0.3, 0.5, 0.2, //
            0.3, 0.3, 0.4,
        ],
        &[[10.0, 8.0], [20.0, 10.0], [25.0, 12.0]],
        &[
            [[5.0, 1.0], [1.0, 5.0]],
            [[10.0, 1.0], [1.0, 10.0]],
            [[15.0, 1.0], [1.0, 15.0]],
        ],
        4.0,
        EmissionConvention::ConditionOnNext,
    )
    .unwrap()
}

pub fn dirichlet(rng: &mut StdRng, k: usize) -> Vec<f64> {
    let weights: Vec<f64> = (0..k).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

pub fn random_belief(rng: &mut StdRng, n: usize) -> BeliefVector {
    BeliefVector::new(dirichlet(rng, n)).unwrap()
}

/// A random small HMM: Dirichlet rows, ascending integer supports, either
/// emission convention.
pub fn random_hmm(rng: &mut StdRng, max_states: usize, max_y: usize, max_x: usize) -> HiddenMarkovModel {
    let n_states = rng.gen_range(1..=max_states);
    let n_y = rng.gen_range(1..=max_y);
    let n_x = rng.gen_range(1..=max_x);
    let mut transition = Vec::new();
    for _ in 0..n_states {
        transition.extend(dirichlet(rng, n_states));
    }
    let mut emission = Vec::new();
    for _ in 0..n_states {
        emission.extend(dirichlet(rng, n_y * n_x));
    }
    let mut y_support = Vec::with_capacity(n_y);
    let mut y = 0i64;
    for _ in 0..n_y {
        y += rng.gen_range(1..4);
        y_support.push(y);
    }
    let x_support: Vec<i64> = (0..n_x as i64).collect();
    let convention = if rng.gen_bool(0.5) {
        EmissionConvention::ConditionOnNext
    } else {
        EmissionConvention::ConditionOnCurrent
    };
    HiddenMarkovModel::new(transition, emission, y_support, x_support, convention).unwrap()
}

fn emitter(convention: EmissionConvention, from: usize, to: usize) -> usize {
    match convention {
        EmissionConvention::ConditionOnNext => to,
        EmissionConvention::ConditionOnCurrent => from,
    }
}

/// Probability of the observation prefix `obs[..len]` jointly with the
/// chain ending in each state, by explicit enumeration over all latent
/// paths of that length.
pub fn enumerate_prefix_joint(
    model: &HiddenMarkovModel,
    obs: &ObservationSequence,
    b0: &BeliefVector,
    len: usize,
) -> Vec<f64> {
    let n = model.n_states();
    let mut joint = vec![0.0; n];
    let mut path = vec![0usize; len + 1];
    'paths: loop {
        let mut p = b0.prob(path[0]);
        for t in 0..len {
            let yi = model.y_index(obs.demands[t]).unwrap();
            let xi = model.x_index(obs.aods[t]).unwrap();
            let e = emitter(model.convention(), path[t], path[t + 1]);
            p *= model.transition_prob(path[t], path[t + 1]) * model.emission_prob(e, yi, xi);
        }
        joint[path[len]] += p;
        let mut k = 0;
        loop {
            path[k] += 1;
            if path[k] < n {
                break;
            }
            path[k] = 0;
            k += 1;
            if k > len {
                break 'paths;
            }
        }
    }
    joint
}

/// Total probability of a full observation sequence by path enumeration.
pub fn enumerate_likelihood(
    model: &HiddenMarkovModel,
    obs: &ObservationSequence,
    b0: &BeliefVector,
) -> f64 {
    enumerate_prefix_joint(model, obs, b0, obs.len()).iter().sum()
}

/// Smallest minimizer of the expected newsvendor cost by exhaustive scan.
pub fn brute_force_basestock(dist: &TauDemandDistribution, h: f64, p: f64) -> i64 {
    let mut best = dist.support[0];
    let mut best_cost = f64::INFINITY;
    for &level in &dist.support {
        let cost = newsvendor_expected_cost(level, dist, h, p);
        if cost < best_cost {
            best_cost = cost;
            best = level;
        }
    }
    best
}
