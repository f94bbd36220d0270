//! Tabular dynamic programming: value iteration, the grid-discretized
//! belief MDP, the information-relaxation lower bound, and the
//! probability-matching real-time heuristic.
//!
//! All three specialized constructions reduce to one [`TabularMdp`] shape
//! and share the same value-iteration solver:
//!
//! * the grid MDP lives on (inventory position x grid belief), with
//!   successor beliefs projected to their nearest grid point;
//! * the relaxation MDP lives on (inventory position x latent state) — the
//!   decision-maker is granted the modulation state, which can only lower
//!   the optimal cost, so averaging its values under a belief bounds the
//!   partially observed problem from below;
//! * the heuristic MDP lives on (inventory position x next demand) with the
//!   belief frozen at the query point, re-solved at every call.

use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::belief::BeliefVector;
use crate::belief_grid::{nearest_grid_point, BeliefGrid};
use crate::error::{invalid, Result};
use crate::hmm::sample_categorical;
use crate::inventory::{
    newsvendor_expected_cost, tau_demand_distribution, InventoryModel, TauDemandDistribution,
};

/// Default sup-norm tolerance for value iteration.
pub const DEFAULT_VI_TOL: f64 = 1e-8;
/// Default iteration cap for value iteration.
pub const DEFAULT_VI_MAX_ITERS: usize = 100_000;

/// One feasible action: an external label (here: an order-up-to level), its
/// expected one-step cost, and a sparse distribution over successor states.
#[derive(Debug, Clone)]
pub struct MdpAction {
    pub level: i64,
    pub cost: f64,
    pub transitions: Vec<(usize, f64)>,
}

/// A finite discounted MDP with per-state feasible-action lists.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    beta: f64,
    actions: Vec<Vec<MdpAction>>,
}

impl TabularMdp {
    pub fn new(actions: Vec<Vec<MdpAction>>, beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(invalid("discount factor must lie in [0, 1)"));
        }
        let n = actions.len();
        if n == 0 {
            return Err(invalid("MDP needs at least one state"));
        }
        for (s, list) in actions.iter().enumerate() {
            if list.is_empty() {
                return Err(invalid(format!("state {s} has no feasible action")));
            }
            for action in list {
                if !action.cost.is_finite() {
                    return Err(invalid(format!("state {s} has a non-finite cost")));
                }
                let mut sum = 0.0;
                for &(target, p) in &action.transitions {
                    if target >= n {
                        return Err(invalid(format!("state {s} transitions out of range")));
                    }
                    if !(p >= 0.0) {
                        return Err(invalid(format!("state {s} has a negative probability")));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(invalid(format!(
                        "state {s} action {} transition mass {sum}",
                        action.level
                    )));
                }
            }
        }
        Ok(Self { beta, actions })
    }

    pub fn n_states(&self) -> usize {
        self.actions.len()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn actions(&self, state: usize) -> &[MdpAction] {
        &self.actions[state]
    }
}

/// One application of the Bellman optimality operator.
pub fn bellman_backup(mdp: &TabularMdp, values: &[f64]) -> Vec<f64> {
    (0..mdp.n_states())
        .map(|s| {
            mdp.actions(s)
                .iter()
                .map(|a| q_value(mdp, a, values))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

#[inline]
fn q_value(mdp: &TabularMdp, action: &MdpAction, values: &[f64]) -> f64 {
    let mut cont = 0.0;
    for &(target, p) in &action.transitions {
        cont += p * values[target];
    }
    action.cost + mdp.beta * cont
}

#[derive(Debug, Clone)]
pub struct ValueIterationResult {
    pub values: Vec<f64>,
    /// Index into each state's feasible-action list; ties take the first
    /// (smallest-level) action.
    pub policy: Vec<usize>,
    /// Sup-norm residual per iteration.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

impl ValueIterationResult {
    /// The chosen order-up-to level per state.
    pub fn policy_levels(&self, mdp: &TabularMdp) -> Vec<i64> {
        self.policy
            .iter()
            .enumerate()
            .map(|(s, &a)| mdp.actions(s)[a].level)
            .collect()
    }
}

/// Successive approximation of the optimality equation from the zero
/// function, stopping when the sup-norm residual reaches `tol`. A run that
/// exhausts `max_iters` first returns its partial result with
/// `converged = false`.
pub fn value_iteration(
    mdp: &TabularMdp,
    tol: f64,
    max_iters: usize,
) -> Result<ValueIterationResult> {
    if !(tol > 0.0) {
        return Err(invalid("tolerance must be positive"));
    }
    let mut values = vec![0.0; mdp.n_states()];
    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..max_iters {
        let next = bellman_backup(mdp, &values);
        let residual = values
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        residuals.push(residual);
        values = next;
        if residual <= tol {
            converged = true;
            break;
        }
    }
    // Greedy policy at the final values; strict improvement keeps the
    // first (smallest-level) action on ties.
    let policy = (0..mdp.n_states())
        .map(|s| {
            let mut best = 0;
            let mut best_q = f64::INFINITY;
            for (i, a) in mdp.actions(s).iter().enumerate() {
                let q = q_value(mdp, a, &values);
                if q < best_q {
                    best_q = q;
                    best = i;
                }
            }
            best
        })
        .collect();
    Ok(ValueIterationResult { values, policy, residuals, converged })
}

// ---------------------------------------------------------------------------
// Inventory-position state spaces
// ---------------------------------------------------------------------------

/// The truncated position range used by the inventory MDPs:
/// `[min(delta) - tau * max(Y), max(delta)]`. Backlogging is unbounded in
/// principle; positions escaping the range are clamped, and the margin of
/// `tau` maximal demands keeps the clamp unreachable under any policy that
/// orders into the achievable-sum set.
pub fn default_position_range(inv: &InventoryModel) -> (i64, i64) {
    let delta = inv.delta_set();
    let max_y = *inv.demand_support().last().expect("support non-empty");
    (
        delta[0] - inv.tau() as i64 * max_y,
        *delta.last().expect("delta non-empty"),
    )
}

fn position_vector(range: (i64, i64)) -> Result<Vec<i64>> {
    if range.0 > range.1 {
        return Err(invalid("position range is empty"));
    }
    Ok((range.0..=range.1).collect())
}

fn clamp_position(p: i64, range: (i64, i64), clamps: &mut u64) -> i64 {
    if p < range.0 {
        *clamps += 1;
        range.0
    } else if p > range.1 {
        *clamps += 1;
        range.1
    } else {
        p
    }
}

/// Feasible order-up-to levels at a position: the no-order action (stay at
/// the current position) plus every achievable-sum level at or above it,
/// ascending and deduplicated.
fn feasible_levels(position: i64, delta: &[i64]) -> Vec<i64> {
    let mut levels = vec![position];
    levels.extend(delta.iter().copied().filter(|&d| d > position));
    levels
}

// ---------------------------------------------------------------------------
// Grid MDP (finite-belief discretization)
// ---------------------------------------------------------------------------

/// Index layout of a product state space (position x secondary index).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProductLayout {
    pub positions: Vec<i64>,
    pub n_secondary: usize,
}

impl ProductLayout {
    pub fn n_states(&self) -> usize {
        self.positions.len() * self.n_secondary
    }

    pub fn state_index(&self, position: i64, secondary: usize) -> Option<usize> {
        let pos_idx = self.positions.binary_search(&position).ok()?;
        Some(pos_idx * self.n_secondary + secondary)
    }

    pub fn unpack(&self, state: usize) -> (i64, usize) {
        (
            self.positions[state / self.n_secondary],
            state % self.n_secondary,
        )
    }
}

/// The grid-discretized belief MDP together with its layout.
#[derive(Debug, Clone)]
pub struct GridMdp {
    pub mdp: TabularMdp,
    pub layout: ProductLayout,
    /// Successor positions that fell outside the range during construction.
    pub clamp_events: u64,
    /// Worst sup-norm distance from a successor belief to its projected
    /// grid point. Large values flag a grid too sparse for the dynamics.
    pub max_projection_distance: f64,
}

/// Builds the completely observed MDP on (inventory position x grid
/// belief). Actions are order-up-to levels; the expected one-step cost is
/// the newsvendor cost of the chosen level under the grid point's
/// lead-time demand distribution; successor beliefs are projected onto
/// their nearest grid point.
pub fn build_grid_mdp(
    inv: &InventoryModel,
    grid: &BeliefGrid,
    position_range: (i64, i64),
) -> Result<GridMdp> {
    if grid.is_empty() {
        return Err(invalid("belief grid must be non-empty"));
    }
    let delta = inv.delta_set();
    let max_y = *inv.demand_support().last().unwrap();
    if position_range.1 < *delta.last().unwrap() || position_range.0 > delta[0] - max_y {
        return Err(invalid(
            "position range must cover [min(delta) - max demand, max(delta)]",
        ));
    }
    let positions = position_vector(position_range)?;
    let n_grid = grid.len();
    let layout = ProductLayout { positions: positions.clone(), n_secondary: n_grid };
    let model = inv.hmm();

    // Per grid point: lead-time demand distribution for costs, and the
    // positive-probability observation outcomes with projected successors.
    let mut dists = Vec::with_capacity(n_grid);
    let mut outcomes: Vec<Vec<(i64, f64, usize)>> = Vec::with_capacity(n_grid);
    let mut max_projection_distance = 0.0f64;
    for b in grid.points() {
        dists.push(inv.tau_demand_distribution(b)?);
        let sigma = model.sigma(b)?;
        let mut rows = Vec::new();
        for (yi, &y) in sigma.y_support.iter().enumerate() {
            for (xi, &x) in sigma.x_support.iter().enumerate() {
                let p = sigma.prob(yi, xi);
                if p <= 0.0 {
                    continue;
                }
                let posterior = model.lambda_update(b, y, x)?;
                let projected = nearest_grid_point(grid, &posterior);
                max_projection_distance = max_projection_distance
                    .max(grid.points()[projected].sup_distance(&posterior));
                rows.push((y, p, projected));
            }
        }
        outcomes.push(rows);
    }

    let mut clamp_events = 0u64;
    let mut actions = Vec::with_capacity(layout.n_states());
    for &position in &positions {
        for g in 0..n_grid {
            let mut list = Vec::new();
            for level in feasible_levels(position, &delta) {
                let cost =
                    newsvendor_expected_cost(level, &dists[g], inv.h_tilde(), inv.p_tilde());
                let mut row: std::collections::BTreeMap<usize, f64> =
                    std::collections::BTreeMap::new();
                for &(y, p, g_next) in &outcomes[g] {
                    let next_pos = clamp_position(level - y, position_range, &mut clamp_events);
                    let target = layout
                        .state_index(next_pos, g_next)
                        .expect("clamped position is in range");
                    *row.entry(target).or_default() += p;
                }
                list.push(MdpAction {
                    level,
                    cost,
                    transitions: row.into_iter().collect(),
                });
            }
            actions.push(list);
        }
    }
    Ok(GridMdp {
        mdp: TabularMdp::new(actions, inv.beta())?,
        layout,
        clamp_events,
        max_projection_distance,
    })
}

/// Value function and greedy policy of the solved grid MDP.
#[derive(Debug, Clone)]
pub struct GridValueFunction {
    pub layout: ProductLayout,
    pub values: Vec<f64>,
    pub levels: Vec<i64>,
    pub converged: bool,
}

impl GridValueFunction {
    pub fn value(&self, position: i64, grid_index: usize) -> Option<f64> {
        self.layout
            .state_index(position, grid_index)
            .map(|s| self.values[s])
    }

    pub fn level(&self, position: i64, grid_index: usize) -> Option<i64> {
        self.layout
            .state_index(position, grid_index)
            .map(|s| self.levels[s])
    }

    /// CSV export: `position,grid_index,value,action`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("position,grid_index,value,action\n");
        for state in 0..self.values.len() {
            let (position, g) = self.layout.unpack(state);
            out.push_str(&format!(
                "{},{},{},{}\n",
                position, g, self.values[state], self.levels[state]
            ));
        }
        out
    }
}

/// Builds and solves the grid MDP in one step.
pub fn solve_grid_mdp(
    inv: &InventoryModel,
    grid: &BeliefGrid,
    position_range: (i64, i64),
    tol: f64,
    max_iters: usize,
) -> Result<GridValueFunction> {
    let built = build_grid_mdp(inv, grid, position_range)?;
    let solved = value_iteration(&built.mdp, tol, max_iters)?;
    Ok(GridValueFunction {
        layout: built.layout,
        levels: solved.policy_levels(&built.mdp),
        values: solved.values,
        converged: solved.converged,
    })
}

/// Largest concavity violation of a grid value function over collinear
/// grid-point triples, maximized over positions: for `b_k` on the segment
/// between `b_i` and `b_j`, the excess
/// `alpha v(s, b_i) + (1 - alpha) v(s, b_j) - v(s, b_k)`.
///
/// A diagnostic, not an assertion: concavity in the belief holds exactly
/// only for the true value function, so the grid solve carries slack.
/// Returns `None` when the grid contains no collinear triple.
pub fn grid_concavity_slack(
    values: &GridValueFunction,
    grid: &BeliefGrid,
    collinearity_tol: f64,
) -> Option<f64> {
    let points = grid.points();
    let n = points.len();
    let mut worst: Option<f64> = None;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let pi = points[i].probs();
            let pj = points[j].probs();
            for k in 0..n {
                if k == i || k == j {
                    continue;
                }
                let pk = points[k].probs();
                // Solve for alpha on the widest coordinate, then check fit.
                let (coord, span) = pi
                    .iter()
                    .zip(pj)
                    .map(|(a, b)| (a - b).abs())
                    .enumerate()
                    .fold((0, 0.0), |acc, (c, d)| if d > acc.1 { (c, d) } else { acc });
                if span < collinearity_tol {
                    continue;
                }
                let alpha = (pk[coord] - pj[coord]) / (pi[coord] - pj[coord]);
                if !(0.0..=1.0).contains(&alpha) {
                    continue;
                }
                let on_segment = pk
                    .iter()
                    .enumerate()
                    .all(|(c, &v)| (alpha * pi[c] + (1.0 - alpha) * pj[c] - v).abs()
                        <= collinearity_tol);
                if !on_segment {
                    continue;
                }
                for (pos_idx, _) in values.layout.positions.iter().enumerate() {
                    let s_i = pos_idx * values.layout.n_secondary + i;
                    let s_j = pos_idx * values.layout.n_secondary + j;
                    let s_k = pos_idx * values.layout.n_secondary + k;
                    let excess = alpha * values.values[s_i] + (1.0 - alpha) * values.values[s_j]
                        - values.values[s_k];
                    worst = Some(worst.map_or(excess, |w: f64| w.max(excess)));
                }
            }
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Information relaxation
// ---------------------------------------------------------------------------

/// Optimal values of the relaxed problem in which the decision-maker
/// observes the latent modulation state, over (position x latent state).
#[derive(Debug, Clone)]
pub struct RelaxationValues {
    pub layout: ProductLayout,
    pub values: Vec<f64>,
    pub levels: Vec<i64>,
    pub converged: bool,
}

impl RelaxationValues {
    pub fn value(&self, position: i64, latent: usize) -> Option<f64> {
        self.layout.state_index(position, latent).map(|s| self.values[s])
    }
}

/// The relaxed MDP on (position x latent state): one-step costs are
/// newsvendor costs under the lead-time demand distribution conditioned on
/// the known latent state, and (demand, next state) pairs follow the
/// chain's joint kernel.
pub fn build_relaxation_mdp(
    inv: &InventoryModel,
    position_range: (i64, i64),
) -> Result<(TabularMdp, ProductLayout)> {
    let model = inv.hmm();
    let n_latent = model.n_states();
    let delta = inv.delta_set();
    let positions = position_vector(position_range)?;
    if position_range.1 < *delta.last().unwrap() {
        return Err(invalid("position range must reach max(delta)"));
    }
    let layout = ProductLayout { positions: positions.clone(), n_secondary: n_latent };
    let kernel = model.demand_step_kernel();
    let y_support = model.y_support();
    let dists: Vec<TauDemandDistribution> = (0..n_latent)
        .map(|u| {
            tau_demand_distribution(model, &BeliefVector::degenerate(n_latent, u), inv.tau())
        })
        .collect::<Result<_>>()?;
    let mut clamps = 0u64;
    let mut actions = Vec::with_capacity(layout.n_states());
    for &position in &positions {
        for u in 0..n_latent {
            let mut list = Vec::new();
            for level in feasible_levels(position, &delta) {
                let cost =
                    newsvendor_expected_cost(level, &dists[u], inv.h_tilde(), inv.p_tilde());
                let mut row: std::collections::BTreeMap<usize, f64> =
                    std::collections::BTreeMap::new();
                for &(yi, u_next, p) in &kernel[u] {
                    let next_pos =
                        clamp_position(level - y_support[yi], position_range, &mut clamps);
                    let target = layout.state_index(next_pos, u_next).unwrap();
                    *row.entry(target).or_default() += p;
                }
                list.push(MdpAction { level, cost, transitions: row.into_iter().collect() });
            }
            actions.push(list);
        }
    }
    Ok((TabularMdp::new(actions, inv.beta())?, layout))
}

/// Solves the relaxed MDP to the default value-iteration tolerance.
pub fn information_relaxation_values(
    inv: &InventoryModel,
    position_range: (i64, i64),
) -> Result<RelaxationValues> {
    let (mdp, layout) = build_relaxation_mdp(inv, position_range)?;
    let solved = value_iteration(&mdp, DEFAULT_VI_TOL, DEFAULT_VI_MAX_ITERS)?;
    Ok(RelaxationValues {
        layout,
        levels: solved.policy_levels(&mdp),
        values: solved.values,
        converged: solved.converged,
    })
}

/// The information-relaxation lower bound at a (position, belief) pair:
/// the belief-weighted average of the relaxed values. No feasible policy
/// of the partially observed problem can do better.
pub fn relaxation_lower_bound(
    v_m: &RelaxationValues,
    belief: &BeliefVector,
    position: i64,
) -> Result<f64> {
    if belief.len() != v_m.layout.n_secondary {
        return Err(invalid("belief dimension does not match the relaxation table"));
    }
    let base = v_m
        .layout
        .state_index(position, 0)
        .ok_or_else(|| invalid(format!("position {position} outside the solved range")))?;
    Ok(belief
        .probs()
        .iter()
        .enumerate()
        .map(|(u, &p)| p * v_m.values[base + u])
        .sum())
}

// ---------------------------------------------------------------------------
// Real-time probability-matching heuristic
// ---------------------------------------------------------------------------

/// The fixed-belief MDP solved by the real-time heuristic, on
/// (position x next demand value).
#[derive(Debug, Clone)]
pub struct HeuristicPolicy {
    pub layout: ProductLayout,
    pub demand_values: Vec<i64>,
    /// Optimal order-up-to level per (position, demand) state.
    pub levels: Vec<i64>,
    pub values: Vec<f64>,
    /// Demand predictive `sigma(y' | b)` at the frozen belief.
    pub sigma_demand: Vec<f64>,
    pub converged: bool,
}

impl HeuristicPolicy {
    pub fn level(&self, position: i64, y_index: usize) -> Option<i64> {
        self.layout.state_index(position, y_index).map(|s| self.levels[s])
    }

    /// The probability-matching mixture value
    /// `sum_y sigma(y | b) v'_y(position, b)`: the diagnostic quantity that
    /// is likely — though not guaranteed — to bound the optimal cost from
    /// below.
    pub fn mixture_value(&self, position: i64) -> Option<f64> {
        let base = self.layout.state_index(position, 0)?;
        Some(
            self.sigma_demand
                .iter()
                .enumerate()
                .map(|(yi, &p)| p * self.values[base + yi])
                .sum(),
        )
    }
}

/// Solves the heuristic's reduced MDP for a frozen belief.
///
/// State `(s, y')` pairs the inventory position with the demand about to be
/// realized; the cost of ordering up to `level` is the newsvendor cost of
/// the lead-time demand conditioned on both the belief and that first
/// demand; successor demands follow the one-step-updated predictive while
/// the value function's belief argument stays frozen, exactly as the
/// reduced optimality equation is stated.
pub fn heuristic_policy(
    inv: &InventoryModel,
    belief: &BeliefVector,
    position_range: (i64, i64),
) -> Result<HeuristicPolicy> {
    let model = inv.hmm();
    let y_support = model.y_support().to_vec();
    let n_y = y_support.len();
    let delta = inv.delta_set();
    let positions = position_vector(position_range)?;
    if position_range.1 < *delta.last().unwrap() {
        return Err(invalid("position range must reach max(delta)"));
    }
    let layout = ProductLayout { positions: positions.clone(), n_secondary: n_y };
    let sigma_demand = model.sigma_demand(belief)?;

    // Per observed demand: the belief updated on that demand alone, the
    // successor-demand predictive at the updated belief, and the lead-time
    // demand distribution conditioned on (belief, first demand). A demand
    // with zero predictive probability carries no information; its states
    // keep the frozen belief so the MDP stays well-formed.
    let mut next_sigma = Vec::with_capacity(n_y);
    let mut conditional_dists = Vec::with_capacity(n_y);
    for (yi, &y) in y_support.iter().enumerate() {
        let updated = if sigma_demand[yi] > 0.0 {
            model.lambda_update_demand_only(belief, y)?
        } else {
            belief.clone()
        };
        next_sigma.push(model.sigma_demand(&updated)?);
        let dist = if inv.tau() == 1 {
            TauDemandDistribution { support: vec![y], pmf: vec![1.0] }
        } else {
            let rest = tau_demand_distribution(model, &updated, inv.tau() - 1)?;
            TauDemandDistribution {
                support: rest.support.iter().map(|s| s + y).collect(),
                pmf: rest.pmf,
            }
        };
        conditional_dists.push(dist);
    }

    let mut clamps = 0u64;
    let mut actions = Vec::with_capacity(layout.n_states());
    for &position in &positions {
        for yi in 0..n_y {
            let mut list = Vec::new();
            for level in feasible_levels(position, &delta) {
                let cost = newsvendor_expected_cost(
                    level,
                    &conditional_dists[yi],
                    inv.h_tilde(),
                    inv.p_tilde(),
                );
                let next_pos =
                    clamp_position(level - y_support[yi], position_range, &mut clamps);
                let transitions = next_sigma[yi]
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(y_next, &p)| {
                        (layout.state_index(next_pos, y_next).unwrap(), p)
                    })
                    .collect();
                list.push(MdpAction { level, cost, transitions });
            }
            actions.push(list);
        }
    }
    let mdp = TabularMdp::new(actions, inv.beta())?;
    let solved = value_iteration(&mdp, DEFAULT_VI_TOL, DEFAULT_VI_MAX_ITERS)?;
    Ok(HeuristicPolicy {
        layout,
        demand_values: y_support,
        levels: solved.policy_levels(&mdp),
        values: solved.values,
        sigma_demand,
        converged: solved.converged,
    })
}

/// The probability-matching action at a (position, belief) pair: solve the
/// reduced MDP fresh, draw the next demand from the predictive, and return
/// that demand's optimal order-up-to level. Deterministic given the seed.
pub fn heuristic_action(
    inv: &InventoryModel,
    position: i64,
    belief: &BeliefVector,
    seed: u64,
) -> Result<i64> {
    let (lo, hi) = default_position_range(inv);
    let range = (lo.min(position), hi.max(position));
    let policy = heuristic_policy(inv, belief, range)?;
    let mut rng = StdRng::seed_from_u64(seed);
    let yi = sample_categorical(&policy.sigma_demand, &mut rng);
    policy
        .level(position, yi)
        .ok_or_else(|| invalid("position escaped its own range"))
}
