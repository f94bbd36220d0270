//! Lead-time demand and base-stock levels for the inventory-position
//! formulation.
//!
//! With a replenishment delay of `tau` periods, the decision each epoch is
//! an order-up-to level for the inventory position, and the relevant
//! uncertainty is the total demand over the next `tau` epochs. Working in
//! adjusted costs (`h_tilde`, `p_tilde`) projects the per-unit purchase
//! cost out of the optimality equation, leaving a newsvendor objective
//! whose smallest minimizer — the base-stock level — sits at the critical
//! fractile `p_tilde / (p_tilde + h_tilde)` of the lead-time demand
//! distribution.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::belief::BeliefVector;
use crate::belief_grid::BeliefGrid;
use crate::error::{invalid, Result};
use crate::hmm::HiddenMarkovModel;

/// The inventory-position SEP-POMDP instance: lead time, adjusted costs,
/// discount factor, and the demand/AOD model.
#[derive(Debug, Clone)]
pub struct InventoryModel {
    tau: u32,
    h_tilde: f64,
    p_tilde: f64,
    beta: f64,
    hmm: HiddenMarkovModel,
}

impl InventoryModel {
    pub fn new(
        hmm: HiddenMarkovModel,
        tau: u32,
        h_tilde: f64,
        p_tilde: f64,
        beta: f64,
    ) -> Result<Self> {
        if !(h_tilde > 0.0) || !(p_tilde > 0.0) {
            return Err(invalid("adjusted costs must be positive"));
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(invalid("discount factor must lie in [0, 1)"));
        }
        if tau == 0 {
            return Err(invalid("lead time must be at least 1 period"));
        }
        Ok(Self { tau, h_tilde, p_tilde, beta, hmm })
    }

    /// Converts raw holding/underage/purchase costs to the adjusted pair
    /// `h_tilde = beta^tau * h + c`, `p_tilde = beta^tau * p - c`.
    pub fn from_raw_costs(
        hmm: HiddenMarkovModel,
        tau: u32,
        h: f64,
        p: f64,
        c: f64,
        beta: f64,
    ) -> Result<Self> {
        let discount = beta.powi(tau as i32);
        Self::new(hmm, tau, discount * h + c, discount * p - c, beta)
    }

    pub fn hmm(&self) -> &HiddenMarkovModel {
        &self.hmm
    }

    pub fn tau(&self) -> u32 {
        self.tau
    }

    pub fn h_tilde(&self) -> f64 {
        self.h_tilde
    }

    pub fn p_tilde(&self) -> f64 {
        self.p_tilde
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn demand_support(&self) -> &[i64] {
        self.hmm.y_support()
    }

    /// The achievable order-up-to levels for this instance.
    pub fn delta_set(&self) -> Vec<i64> {
        delta_set(self.hmm.y_support(), self.tau)
    }

    pub fn tau_demand_distribution(&self, belief: &BeliefVector) -> Result<TauDemandDistribution> {
        tau_demand_distribution(&self.hmm, belief, self.tau)
    }

    pub fn exact_basestock(&self, belief: &BeliefVector) -> Result<i64> {
        exact_basestock(&self.hmm, belief, self.tau, self.h_tilde, self.p_tilde)
    }
}

/// Exact distribution of the total demand over `tau` consecutive epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct TauDemandDistribution {
    /// The set of achievable totals, ascending.
    pub support: Vec<i64>,
    /// Probability per support element; sums to one.
    pub pmf: Vec<f64>,
}

impl TauDemandDistribution {
    /// CDF evaluated at each support element.
    pub fn cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.pmf
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect()
    }

    pub fn mean(&self) -> f64 {
        self.support
            .iter()
            .zip(&self.pmf)
            .map(|(&s, &p)| s as f64 * p)
            .sum()
    }
}

/// All achievable sums of `tau` elements of the demand support,
/// deduplicated and ascending.
pub fn delta_set(y_support: &[i64], tau: u32) -> Vec<i64> {
    assert!(tau >= 1, "tau must be at least 1");
    assert!(!y_support.is_empty(), "demand support must be non-empty");
    let mut sums: std::collections::BTreeSet<i64> = y_support.iter().copied().collect();
    for _ in 1..tau {
        let mut next = std::collections::BTreeSet::new();
        for &s in &sums {
            for &y in y_support {
                next.insert(s + y);
            }
        }
        sums = next;
    }
    sums.into_iter().collect()
}

/// Distribution of `y_{t+1} + ... + y_{t+tau}` given the current belief,
/// by forward dynamic programming over (latent state, partial sum). The
/// AOD component is marginalized at every step.
pub fn tau_demand_distribution(
    model: &HiddenMarkovModel,
    belief: &BeliefVector,
    tau: u32,
) -> Result<TauDemandDistribution> {
    if tau == 0 {
        return Err(invalid("tau must be at least 1"));
    }
    if belief.len() != model.n_states() {
        return Err(invalid("belief dimension does not match the model"));
    }
    let kernel = model.demand_step_kernel();
    let y_support = model.y_support();
    // State of the DP: (latent chain state, running total) -> probability.
    let mut layer: BTreeMap<(usize, i64), f64> = belief
        .probs()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(u, &p)| ((u, 0), p))
        .collect();
    for _ in 0..tau {
        let mut next: BTreeMap<(usize, i64), f64> = BTreeMap::new();
        for (&(u, total), &p) in &layer {
            for &(yi, u2, q) in &kernel[u] {
                *next.entry((u2, total + y_support[yi])).or_default() += p * q;
            }
        }
        layer = next;
    }
    let support = delta_set(y_support, tau);
    let index: BTreeMap<i64, usize> =
        support.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let mut pmf = vec![0.0; support.len()];
    for ((_, total), p) in layer {
        pmf[index[&total]] += p;
    }
    Ok(TauDemandDistribution { support, pmf })
}

/// Expected newsvendor cost of holding `level` against a lead-time demand
/// distribution: `sum_d pmf(d) * [h_tilde (level - d)^+ + p_tilde (d - level)^+]`.
pub fn newsvendor_expected_cost(
    level: i64,
    dist: &TauDemandDistribution,
    h_tilde: f64,
    p_tilde: f64,
) -> f64 {
    dist.support
        .iter()
        .zip(&dist.pmf)
        .map(|(&d, &p)| {
            let over = (level - d).max(0) as f64;
            let under = (d - level).max(0) as f64;
            p * (h_tilde * over + p_tilde * under)
        })
        .sum()
}

/// The base-stock level `a*(b)`: the smallest element of the achievable-sum
/// set whose lead-time demand CDF reaches the critical fractile
/// `p_tilde / (p_tilde + h_tilde)`. Equals the smallest minimizer of the
/// expected newsvendor cost over that set.
pub fn exact_basestock(
    model: &HiddenMarkovModel,
    belief: &BeliefVector,
    tau: u32,
    h_tilde: f64,
    p_tilde: f64,
) -> Result<i64> {
    let dist = tau_demand_distribution(model, belief, tau)?;
    Ok(basestock_from_distribution(&dist, h_tilde, p_tilde))
}

/// Critical-fractile scan over an explicit lead-time demand distribution.
pub fn basestock_from_distribution(
    dist: &TauDemandDistribution,
    h_tilde: f64,
    p_tilde: f64,
) -> i64 {
    let fractile = p_tilde / (p_tilde + h_tilde);
    let mut acc = 0.0;
    for (&level, &p) in dist.support.iter().zip(&dist.pmf) {
        acc += p;
        if acc >= fractile {
            return level;
        }
    }
    *dist.support.last().expect("support is non-empty")
}

/// Monte Carlo estimate of the base-stock level: samples `n_samples`
/// lead-time demand totals given the belief, forms the empirical PMF over
/// the achievable-sum set, and returns the smallest minimizer of the
/// empirical newsvendor cost. Deterministic given the seed; sample `i`
/// uses sub-seed `seed + i`.
pub fn monte_carlo_basestock(
    model: &HiddenMarkovModel,
    belief: &BeliefVector,
    tau: u32,
    h_tilde: f64,
    p_tilde: f64,
    n_samples: usize,
    seed: u64,
) -> Result<i64> {
    if n_samples == 0 {
        return Err(invalid("n_samples must be at least 1"));
    }
    if tau == 0 {
        return Err(invalid("tau must be at least 1"));
    }
    if belief.len() != model.n_states() {
        return Err(invalid("belief dimension does not match the model"));
    }
    let support = delta_set(model.y_support(), tau);
    let index: BTreeMap<i64, usize> =
        support.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let marginals = model.demand_marginals();
    let y_support = model.y_support();
    let mut counts = vec![0u64; support.len()];
    for i in 0..n_samples {
        let mut rng = StdRng::seed_from_u64(seed.wrapping_add(i as u64));
        let mut state = crate::hmm::sample_categorical(belief.probs(), &mut rng);
        let mut total = 0i64;
        for _ in 0..tau {
            let (yi, next) = model.sample_demand_step(state, &marginals, &mut rng);
            total += y_support[yi];
            state = next;
        }
        counts[index[&total]] += 1;
    }
    let pmf: Vec<f64> = counts
        .iter()
        .map(|&c| c as f64 / n_samples as f64)
        .collect();
    let empirical = TauDemandDistribution { support, pmf };
    // Smallest minimizer of the empirical cost over the candidate levels.
    let mut best_level = empirical.support[0];
    let mut best_cost = f64::INFINITY;
    for &level in &empirical.support {
        let cost = newsvendor_expected_cost(level, &empirical, h_tilde, p_tilde);
        if cost < best_cost {
            best_cost = cost;
            best_level = level;
        }
    }
    Ok(best_level)
}

/// One violation of the base-stock attainability hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct AttainabilityViolation {
    pub grid_index: usize,
    pub y: i64,
    pub x: i64,
    /// `a*(b) - y'` at the offending belief.
    pub required: i64,
    /// `a*(lambda(y', x', b))` at the posterior.
    pub available: i64,
}

/// Report of the attainability check `a*(b) - y' <= a*(lambda(y', x', b))`
/// over every grid belief and positive-probability observation pair. The
/// condition is a hypothesis for base-stock optimality, not a theorem, so
/// the report carries the outcome without judgement.
#[derive(Debug, Clone, PartialEq)]
pub struct AttainabilityReport {
    pub holds: bool,
    pub violations: Vec<AttainabilityViolation>,
    pub checked: usize,
}

pub fn check_attainability(
    model: &HiddenMarkovModel,
    grid: &BeliefGrid,
    tau: u32,
    h_tilde: f64,
    p_tilde: f64,
) -> Result<AttainabilityReport> {
    if grid.is_empty() {
        return Err(invalid("grid must be non-empty"));
    }
    let mut violations = Vec::new();
    let mut checked = 0;
    for (gi, b) in grid.points().iter().enumerate() {
        let base = exact_basestock(model, b, tau, h_tilde, p_tilde)?;
        let sigma = model.sigma(b)?;
        for (yi, &y) in sigma.y_support.iter().enumerate() {
            for (xi, &x) in sigma.x_support.iter().enumerate() {
                if sigma.prob(yi, xi) <= 0.0 {
                    continue;
                }
                checked += 1;
                let posterior = model.lambda_update(b, y, x)?;
                let after = exact_basestock(model, &posterior, tau, h_tilde, p_tilde)?;
                if base - y > after {
                    violations.push(AttainabilityViolation {
                        grid_index: gi,
                        y,
                        x,
                        required: base - y,
                        available: after,
                    });
                }
            }
        }
    }
    Ok(AttainabilityReport { holds: violations.is_empty(), violations, checked })
}
