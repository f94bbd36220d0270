//! Monte Carlo policy evaluation and the optimality-gap experiment.
//!
//! Evaluation runs the inventory-position system: demand and AOD pairs are
//! drawn from the *true* model, the belief is filtered through the
//! *evaluation* model (the two coincide only when evaluating the policy
//! built from the truth), and each epoch's order-up-to decision is scored
//! by the newsvendor cost it incurs over its lead-time demand window,
//! discounted to the decision epoch. The adjusted costs already carry the
//! lead-time discount (`h_tilde = beta^tau h + c`), so charging a decision
//! at the epoch it is made keeps simulated totals commensurate with the
//! optimality equation's values — and with the information-relaxation
//! bound. The exogenous observation path is control invariant, so each
//! simulation draws it once and sweeps decisions over it.
//!
//! The gap experiment repeats the whole pipeline — generate data, fit an
//! HMM by EM with several restarts, build the SVM base-stock policy from
//! each fit, evaluate against the truth — across growing dataset sizes,
//! and reports evaluated costs relative to the policy built from the true
//! model.

use rayon::prelude::*;

use crate::baum_welch::baum_welch;
use crate::belief::BeliefVector;
use crate::belief_grid::{build_grid, simulate_belief_trajectory, BeliefGrid};
use crate::error::{invalid, Error, Result};
use crate::hmm::{HiddenMarkovModel, ObservationSequence};
use crate::inventory::{exact_basestock, monte_carlo_basestock};
use crate::svm::{train_ovr, BasestockClassifier, LabeledBeliefSample};

/// Splits one master seed into independent, documented sub-streams.
/// splitmix64 of the master xor a stream constant.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Cost and discount parameters of the inventory instance, detached from
/// any particular demand model so trained and true models can share them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InventoryParams {
    pub tau: u32,
    pub h_tilde: f64,
    pub p_tilde: f64,
    pub beta: f64,
}

impl InventoryParams {
    fn validate(&self) -> Result<()> {
        if self.tau == 0 {
            return Err(invalid("lead time must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(invalid("discount factor must lie in [0, 1)"));
        }
        if !(self.h_tilde >= 0.0) || !(self.p_tilde >= 0.0) {
            return Err(invalid("costs must be non-negative"));
        }
        Ok(())
    }
}

/// Anything that maps a belief to an order-up-to level.
pub trait BasestockPolicy {
    fn level(&self, belief: &BeliefVector) -> Result<i64>;
}

impl BasestockPolicy for BasestockClassifier {
    fn level(&self, belief: &BeliefVector) -> Result<i64> {
        self.classify(belief)
    }
}

/// The exact myopic base-stock policy, recomputed from the model at every
/// query. Slow but oracle-grade; used to cross-check classifier policies.
pub struct ExactBasestockPolicy<'a> {
    pub model: &'a HiddenMarkovModel,
    pub tau: u32,
    pub h_tilde: f64,
    pub p_tilde: f64,
}

impl BasestockPolicy for ExactBasestockPolicy<'_> {
    fn level(&self, belief: &BeliefVector) -> Result<i64> {
        exact_basestock(self.model, belief, self.tau, self.h_tilde, self.p_tilde)
    }
}

/// Aggregate of a Monte Carlo evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub mean_cost: f64,
    /// Sample standard deviation of per-simulation costs over sqrt(n).
    pub std_error: f64,
    pub n_sims: usize,
    pub horizon: usize,
    /// Simulations are independent; this counts belief resets after
    /// observations impossible under the evaluation model.
    pub belief_resets: u64,
    pub per_sim_costs: Option<Vec<f64>>,
}

/// Where a simulation starts: the inventory position at the first
/// decision, the filter's belief, and the distribution the true latent
/// state is drawn from.
#[derive(Debug, Clone)]
pub struct EvaluationStart {
    pub position: i64,
    pub filter_belief: BeliefVector,
    pub latent_belief: BeliefVector,
}

/// Policy evaluation from the standard cold start: position zero and
/// uniform beliefs. Simulation `n` uses sub-seed `seed + n`; the mean is
/// accumulated in simulation-index order, so reruns are bit-identical
/// regardless of thread count.
pub fn evaluate_policy<P: BasestockPolicy + Sync>(
    true_model: &HiddenMarkovModel,
    eval_model: &HiddenMarkovModel,
    policy: &P,
    params: &InventoryParams,
    horizon: usize,
    n_sims: usize,
    seed: u64,
) -> Result<EvaluationReport> {
    let start = EvaluationStart {
        position: 0,
        filter_belief: BeliefVector::uniform(eval_model.n_states()),
        latent_belief: BeliefVector::uniform(true_model.n_states()),
    };
    evaluate_policy_from(
        true_model, eval_model, policy, params, &start, horizon, n_sims, seed, false,
    )
}

/// Policy evaluation from an arbitrary start state.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policy_from<P: BasestockPolicy + Sync>(
    true_model: &HiddenMarkovModel,
    eval_model: &HiddenMarkovModel,
    policy: &P,
    params: &InventoryParams,
    start: &EvaluationStart,
    horizon: usize,
    n_sims: usize,
    seed: u64,
    keep_per_sim: bool,
) -> Result<EvaluationReport> {
    params.validate()?;
    if horizon == 0 || n_sims == 0 {
        return Err(invalid("horizon and n_sims must be at least 1"));
    }
    if start.filter_belief.len() != eval_model.n_states()
        || start.latent_belief.len() != true_model.n_states()
    {
        return Err(invalid("start beliefs do not match the models"));
    }
    let runs: Vec<Result<(f64, u64)>> = (0..n_sims)
        .into_par_iter()
        .map(|n| {
            simulate_one(
                true_model,
                eval_model,
                policy,
                params,
                start,
                horizon,
                seed.wrapping_add(n as u64),
            )
        })
        .collect();
    let mut costs = Vec::with_capacity(n_sims);
    let mut belief_resets = 0;
    for run in runs {
        let (cost, resets) = run?;
        costs.push(cost);
        belief_resets += resets;
    }
    let mean_cost = costs.iter().sum::<f64>() / n_sims as f64;
    let std_error = if n_sims > 1 {
        let var = costs.iter().map(|c| (c - mean_cost).powi(2)).sum::<f64>()
            / (n_sims as f64 - 1.0);
        (var / n_sims as f64).sqrt()
    } else {
        0.0
    };
    Ok(EvaluationReport {
        mean_cost,
        std_error,
        n_sims,
        horizon,
        belief_resets,
        per_sim_costs: keep_per_sim.then_some(costs),
    })
}

fn simulate_one<P: BasestockPolicy>(
    true_model: &HiddenMarkovModel,
    eval_model: &HiddenMarkovModel,
    policy: &P,
    params: &InventoryParams,
    start: &EvaluationStart,
    horizon: usize,
    seed: u64,
) -> Result<(f64, u64)> {
    use rand::SeedableRng;
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let tau = params.tau as usize;
    // The observation process is exogenous, so the whole path is drawn up
    // front: the last decision's demand window needs tau extra steps.
    let mut latent = crate::hmm::sample_categorical(start.latent_belief.probs(), &mut rng);
    let y_support = true_model.y_support();
    let x_support = true_model.x_support();
    let mut demands = Vec::with_capacity(horizon + tau - 1);
    let mut aods = Vec::with_capacity(horizon + tau - 1);
    for _ in 0..horizon + tau - 1 {
        let (yi, xi, next_latent, _) = true_model.sample_step(latent, &mut rng);
        demands.push(y_support[yi]);
        aods.push(x_support[xi]);
        latent = next_latent;
    }
    // Sweep the decisions: order up to the policy level (never below the
    // current position), score the decision against its lead-time demand
    // window at the decision epoch, filter the belief on the next pair.
    let mut belief = start.filter_belief.clone();
    let mut position = start.position;
    let mut discount = 1.0;
    let mut total_cost = 0.0;
    let mut resets = 0;
    for t in 0..horizon {
        let target = policy.level(&belief)?.max(position);
        let window: i64 = demands[t..t + tau].iter().sum();
        let overage = (target - window).max(0) as f64;
        let underage = (window - target).max(0) as f64;
        total_cost += discount * (params.h_tilde * overage + params.p_tilde * underage);
        position = target - demands[t];
        discount *= params.beta;
        belief = match eval_model.lambda_update(&belief, demands[t], aods[t]) {
            Ok(b) => b,
            Err(Error::ImpossibleObservation { .. }) => {
                resets += 1;
                BeliefVector::uniform(eval_model.n_states())
            }
            Err(e) => return Err(e),
        };
    }
    Ok((total_cost, resets))
}

// ---------------------------------------------------------------------------
// Policy construction pipeline
// ---------------------------------------------------------------------------

/// Belief-grid construction parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GridBuildParams {
    /// Total simulated filter steps.
    pub n_steps: usize,
    /// Rounding digits.
    pub digits: u32,
    /// Cardinality cap.
    pub cap: usize,
    /// Monte Carlo samples per grid point when labeling.
    pub label_samples: usize,
    /// Number of independent simulation runs the steps are split across.
    pub restarts: usize,
}

/// SVM training parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmTrainParams {
    pub c: f64,
    pub max_epochs: usize,
    pub tol: f64,
}

/// The artifacts of one policy construction.
#[derive(Debug, Clone)]
pub struct ConstructedPolicy {
    pub grid: BeliefGrid,
    pub samples: Vec<LabeledBeliefSample>,
    pub classifier: BasestockClassifier,
}

/// Runs the full construction pipeline against a demand model: simulate
/// belief trajectories, build the grid, label each grid point with its
/// Monte Carlo base-stock level, and train the one-vs-rest SVM.
pub fn construct_policy(
    model: &HiddenMarkovModel,
    params: &InventoryParams,
    grid_params: &GridBuildParams,
    svm_params: &SvmTrainParams,
    seed: u64,
) -> Result<ConstructedPolicy> {
    params.validate()?;
    if grid_params.restarts == 0 || grid_params.n_steps == 0 {
        return Err(invalid("grid simulation needs at least one run and one step"));
    }
    let b0 = BeliefVector::uniform(model.n_states());
    let steps_per_run = (grid_params.n_steps / grid_params.restarts).max(1);
    let mut beliefs = Vec::with_capacity(grid_params.n_steps);
    for run in 0..grid_params.restarts {
        let run_seed = derive_seed(seed, 0x1000 + run as u64);
        beliefs.extend(simulate_belief_trajectory(model, &b0, steps_per_run, run_seed)?);
    }
    let grid = build_grid(&beliefs, grid_params.digits, grid_params.cap)?;
    let label_seed = derive_seed(seed, 0x2000);
    let samples: Vec<LabeledBeliefSample> = grid
        .points()
        .par_iter()
        .enumerate()
        .map(|(i, b)| {
            // Non-overlapping sub-seed blocks per grid point.
            let point_seed =
                label_seed.wrapping_add((i as u64).wrapping_mul(grid_params.label_samples as u64));
            monte_carlo_basestock(
                model,
                b,
                params.tau,
                params.h_tilde,
                params.p_tilde,
                grid_params.label_samples,
                point_seed,
            )
            .map(|label| LabeledBeliefSample { belief: b.clone(), label })
        })
        .collect::<Result<_>>()?;
    let classifier = train_ovr(
        &samples,
        svm_params.c,
        svm_params.max_epochs,
        svm_params.tol,
        derive_seed(seed, 0x3000),
    )?;
    Ok(ConstructedPolicy { grid, samples, classifier })
}

// ---------------------------------------------------------------------------
// Optimality-gap experiment
// ---------------------------------------------------------------------------

/// HMM training parameters for the experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingParams {
    pub n_states: usize,
    /// Number of trajectories per dataset.
    pub dataset_sizes: Vec<usize>,
    pub n_restarts: usize,
    pub em_tol: f64,
    pub em_max_iters: usize,
}

/// Evaluation parameters for the experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalParams {
    pub horizon: usize,
    pub n_sims: usize,
}

#[derive(Debug, Clone)]
pub struct GapExperimentConfig {
    pub true_model: HiddenMarkovModel,
    pub inventory: InventoryParams,
    pub grid: GridBuildParams,
    pub svm: SvmTrainParams,
    pub training: TrainingParams,
    pub evaluation: EvalParams,
    pub seed: u64,
}

/// One evaluated restart.
#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub dataset_size: usize,
    pub restart: usize,
    pub mean_cost: f64,
    pub std_error: f64,
    pub gap_vs_true: f64,
    pub best: bool,
}

/// Per-size aggregation across restarts.
#[derive(Debug, Clone, PartialEq)]
pub struct GapSummary {
    pub dataset_size: usize,
    pub best_cost: f64,
    pub best_std_error: f64,
    pub mean_cost: f64,
    pub best_gap: f64,
    pub mean_gap: f64,
}

#[derive(Debug, Clone)]
pub struct GapTable {
    pub true_cost: f64,
    pub true_std_error: f64,
    pub rows: Vec<GapRow>,
    pub summaries: Vec<GapSummary>,
}

impl GapTable {
    /// CSV export: `dataset_size,restart,mean_cost,std_error,gap_vs_true,best_flag`.
    pub fn rows_csv(&self) -> String {
        let mut out =
            String::from("dataset_size,restart,mean_cost,std_error,gap_vs_true,best_flag\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.dataset_size,
                r.restart,
                r.mean_cost,
                r.std_error,
                r.gap_vs_true,
                u8::from(r.best)
            ));
        }
        out
    }

    /// CSV export of the per-size curve, with the true-model baseline:
    /// `dataset_size,best_cost,mean_cost,true_cost,best_gap,mean_gap`.
    pub fn summary_csv(&self) -> String {
        let mut out =
            String::from("dataset_size,best_cost,mean_cost,true_cost,best_gap,mean_gap\n");
        for s in &self.summaries {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.dataset_size, s.best_cost, s.mean_cost, self.true_cost, s.best_gap, s.mean_gap
            ));
        }
        out
    }
}

/// Seed streams of the experiment, fanned out from the master seed so each
/// stage can be reproduced in isolation.
pub mod seed_streams {
    /// Data generation: `DATA + size_index * 0x100 + trajectory`.
    pub const DATA: u64 = 0x0100_0000;
    /// EM restarts: `TRAIN + size_index * 0x100 + restart`.
    pub const TRAIN: u64 = 0x0200_0000;
    /// Policy construction: `POLICY + size_index * 0x100 + restart`.
    pub const POLICY: u64 = 0x0300_0000;
    /// Policy construction from the true model.
    pub const TRUE_POLICY: u64 = 0x0400_0000;
    /// Shared evaluation stream (common random numbers across policies).
    pub const EVAL: u64 = 0x0500_0000;
}

/// Generates the synthetic training datasets used by the experiment: for
/// dataset-size index `k`, `sizes[k]` trajectories of the given horizon.
pub fn generate_datasets(
    model: &HiddenMarkovModel,
    sizes: &[usize],
    horizon: usize,
    master_seed: u64,
) -> Result<Vec<Vec<ObservationSequence>>> {
    let b0 = BeliefVector::uniform(model.n_states());
    sizes
        .iter()
        .enumerate()
        .map(|(k, &size)| {
            (0..size)
                .map(|j| {
                    let seed = derive_seed(
                        master_seed,
                        seed_streams::DATA + (k as u64) * 0x100 + j as u64,
                    );
                    Ok(model.sample_trajectory(&b0, horizon, seed)?.observations())
                })
                .collect()
        })
        .collect()
}

/// Runs the full experiment: build and evaluate the true-model policy,
/// then per dataset size fit HMMs with several EM restarts, build a policy
/// from each fit, and evaluate it against the truth. All evaluations share
/// the same seed stream, so cost differences are policy differences.
pub fn optimality_gap_experiment(cfg: &GapExperimentConfig) -> Result<GapTable> {
    optimality_gap_experiment_with_progress(cfg, |_| Ok(()))
}

/// As [`optimality_gap_experiment`], invoking `on_size` with the partial
/// table after each completed dataset size so long runs can flush results
/// incrementally.
pub fn optimality_gap_experiment_with_progress(
    cfg: &GapExperimentConfig,
    mut on_size: impl FnMut(&GapTable) -> Result<()>,
) -> Result<GapTable> {
    if cfg.training.n_restarts == 0 || cfg.training.dataset_sizes.is_empty() {
        return Err(invalid("experiment needs at least one restart and one dataset size"));
    }
    let eval_seed = derive_seed(cfg.seed, seed_streams::EVAL);
    let true_policy = construct_policy(
        &cfg.true_model,
        &cfg.inventory,
        &cfg.grid,
        &cfg.svm,
        derive_seed(cfg.seed, seed_streams::TRUE_POLICY),
    )?;
    let true_report = evaluate_policy(
        &cfg.true_model,
        &cfg.true_model,
        &true_policy.classifier,
        &cfg.inventory,
        cfg.evaluation.horizon,
        cfg.evaluation.n_sims,
        eval_seed,
    )?;

    let datasets = generate_datasets(
        &cfg.true_model,
        &cfg.training.dataset_sizes,
        cfg.evaluation.horizon,
        cfg.seed,
    )?;

    let mut table = GapTable {
        true_cost: true_report.mean_cost,
        true_std_error: true_report.std_error,
        rows: Vec::new(),
        summaries: Vec::new(),
    };
    for (k, (&size, data)) in cfg.training.dataset_sizes.iter().zip(&datasets).enumerate() {
        let mut size_rows = Vec::with_capacity(cfg.training.n_restarts);
        for restart in 0..cfg.training.n_restarts {
            let em_seed = derive_seed(
                cfg.seed,
                seed_streams::TRAIN + (k as u64) * 0x100 + restart as u64,
            );
            let (trained, _trace) = baum_welch(
                data,
                cfg.training.n_states,
                em_seed,
                cfg.training.em_tol,
                cfg.training.em_max_iters,
                cfg.true_model.convention(),
            )?;
            let policy = construct_policy(
                &trained,
                &cfg.inventory,
                &cfg.grid,
                &cfg.svm,
                derive_seed(
                    cfg.seed,
                    seed_streams::POLICY + (k as u64) * 0x100 + restart as u64,
                ),
            )?;
            let report = evaluate_policy(
                &cfg.true_model,
                &trained,
                &policy.classifier,
                &cfg.inventory,
                cfg.evaluation.horizon,
                cfg.evaluation.n_sims,
                eval_seed,
            )?;
            size_rows.push(GapRow {
                dataset_size: size,
                restart,
                mean_cost: report.mean_cost,
                std_error: report.std_error,
                gap_vs_true: report.mean_cost - true_report.mean_cost,
                best: false,
            });
        }
        let best_idx = size_rows
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.mean_cost.partial_cmp(&b.1.mean_cost).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        size_rows[best_idx].best = true;
        let mean_cost = size_rows.iter().map(|r| r.mean_cost).sum::<f64>()
            / size_rows.len() as f64;
        table.summaries.push(GapSummary {
            dataset_size: size,
            best_cost: size_rows[best_idx].mean_cost,
            best_std_error: size_rows[best_idx].std_error,
            mean_cost,
            best_gap: size_rows[best_idx].mean_cost - true_report.mean_cost,
            mean_gap: mean_cost - true_report.mean_cost,
        });
        table.rows.extend(size_rows);
        on_size(&table)?;
    }
    Ok(table)
}
