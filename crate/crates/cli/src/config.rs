//! Experiment configuration: a single JSON document drives every
//! subcommand, so a run is reproducible from one artifact plus a seed.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use sep_pomdp_core::evaluation::{
    EvalParams, GridBuildParams, InventoryParams, SvmTrainParams, TrainingParams,
};
use sep_pomdp_core::hmm::EmissionConvention;
use sep_pomdp_core::HiddenMarkovModel;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub true_model: ModelSpec,
    pub inventory: InventoryConfig,
    pub grid: GridConfig,
    pub svm: SvmConfig,
    pub training: TrainingConfig,
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub bound: BoundConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
}

/// The true demand model: inline, on disk, or discretized Gaussians.
#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpec {
    Inline(HiddenMarkovModel),
    Path(PathBuf),
    Gaussian(GaussianModelSpec),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianModelSpec {
    /// Row per state.
    pub transition: Vec<Vec<f64>>,
    /// Per-state (demand, AOD) means.
    pub means: Vec<[f64; 2]>,
    /// Per-state 2x2 covariances.
    pub covariances: Vec<[[f64; 2]; 2]>,
    /// Half-width of each state's integer grid, in marginal standard
    /// deviations.
    #[serde(default = "default_sigma_span")]
    pub sigma_span: f64,
    pub emission_convention: EmissionConvention,
}

fn default_sigma_span() -> f64 {
    4.0
}

/// Costs arrive either already adjusted (`h_tilde`, `p_tilde`) or raw
/// (`h`, `p`, `c`), converted once on load.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InventoryConfig {
    pub tau: u32,
    pub beta: f64,
    pub h_tilde: Option<f64>,
    pub p_tilde: Option<f64>,
    pub h: Option<f64>,
    pub p: Option<f64>,
    pub c: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub d: u32,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default = "default_label_samples")]
    pub label_samples: usize,
    #[serde(default = "default_one")]
    pub restarts: usize,
}

fn default_label_samples() -> usize {
    100_000
}

fn default_one() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmConfig {
    #[serde(rename = "C_list")]
    pub c_list: Vec<f64>,
    pub max_epochs: usize,
    pub tol: f64,
    #[serde(default = "default_partition_resolution")]
    pub partition_resolution: usize,
}

fn default_partition_resolution() -> usize {
    50
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub n_states: usize,
    pub dataset_sizes: Vec<usize>,
    pub n_restarts: usize,
    pub em_tol: f64,
    pub em_max_iters: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub horizon: usize,
    pub n_sims: usize,
}

/// Bound-report knobs; evaluation settings fill any gaps.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    #[serde(default)]
    pub positions: Vec<i64>,
    pub n_sims: Option<usize>,
    pub horizon: Option<usize>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(path.display().to_string(), e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: &str| Err(CliError::Config(msg.to_string()));
        if self.grid.n == 0 || self.grid.k == 0 || self.grid.d == 0 {
            return bad("grid.N, grid.d and grid.K must be positive");
        }
        if self.grid.label_samples == 0 || self.grid.restarts == 0 {
            return bad("grid.label_samples and grid.restarts must be positive");
        }
        if self.svm.c_list.is_empty() || self.svm.c_list.iter().any(|&c| !(c > 0.0)) {
            return bad("svm.C_list must contain positive values");
        }
        if self.svm.max_epochs == 0 || self.svm.partition_resolution < 2 {
            return bad("svm.max_epochs must be positive and partition_resolution >= 2");
        }
        if self.training.n_states == 0
            || self.training.n_restarts == 0
            || self.training.em_max_iters == 0
            || self.training.dataset_sizes.is_empty()
            || self.training.dataset_sizes.contains(&0)
        {
            return bad("training counts must be positive");
        }
        if self.evaluation.horizon == 0 || self.evaluation.n_sims == 0 {
            return bad("evaluation.horizon and evaluation.n_sims must be positive");
        }
        if !(0.0..1.0).contains(&self.inventory.beta) {
            return bad("inventory.beta must lie in [0, 1)");
        }
        if self.inventory.tau == 0 {
            return bad("inventory.tau must be at least 1");
        }
        self.inventory_params()?;
        Ok(())
    }

    /// Adjusted costs, converting raw (h, p, c) when given.
    pub fn inventory_params(&self) -> Result<InventoryParams, CliError> {
        let inv = &self.inventory;
        let (h_tilde, p_tilde) = match (inv.h_tilde, inv.p_tilde, inv.h, inv.p, inv.c) {
            (Some(h), Some(p), None, None, None) => (h, p),
            (None, None, Some(h), Some(p), Some(c)) => {
                let disc = inv.beta.powi(inv.tau as i32);
                (disc * h + c, disc * p - c)
            }
            _ => {
                return Err(CliError::Config(
                    "inventory costs must be either {h_tilde, p_tilde} or {h, p, c}".into(),
                ))
            }
        };
        if !(h_tilde > 0.0) || !(p_tilde > 0.0) {
            return Err(CliError::Config("adjusted costs must be positive".into()));
        }
        Ok(InventoryParams {
            tau: inv.tau,
            h_tilde,
            p_tilde,
            beta: inv.beta,
        })
    }

    /// Loads or constructs the configured true model. Relative model paths
    /// resolve against the config file's directory.
    pub fn true_model(&self, config_dir: &Path) -> Result<HiddenMarkovModel, CliError> {
        match &self.true_model {
            ModelSpec::Inline(model) => Ok(model.clone()),
            ModelSpec::Path(path) => load_model(&resolve(config_dir, path)),
            ModelSpec::Gaussian(spec) => {
                let n = spec.transition.len();
                if spec.transition.iter().any(|row| row.len() != n) {
                    return Err(CliError::Config("gaussian transition must be square".into()));
                }
                let flat: Vec<f64> = spec.transition.iter().flatten().copied().collect();
                HiddenMarkovModel::from_gaussian_emissions(
                    flat,
                    &spec.means,
                    &spec.covariances,
                    spec.sigma_span,
                    spec.emission_convention,
                )
                .map_err(|e| CliError::Config(e.to_string()))
            }
        }
    }

    pub fn grid_params(&self) -> GridBuildParams {
        GridBuildParams {
            n_steps: self.grid.n,
            digits: self.grid.d,
            cap: self.grid.k,
            label_samples: self.grid.label_samples,
            restarts: self.grid.restarts,
        }
    }

    /// The SVM parameters at a given C (policy construction uses the
    /// largest configured C; the full list drives `build-policy`).
    pub fn svm_params(&self, c: f64) -> SvmTrainParams {
        SvmTrainParams {
            c,
            max_epochs: self.svm.max_epochs,
            tol: self.svm.tol,
        }
    }

    pub fn policy_c(&self) -> f64 {
        self.svm.c_list.iter().copied().fold(f64::MIN, f64::max)
    }

    pub fn training_params(&self) -> TrainingParams {
        TrainingParams {
            n_states: self.training.n_states,
            dataset_sizes: self.training.dataset_sizes.clone(),
            n_restarts: self.training.n_restarts,
            em_tol: self.training.em_tol,
            em_max_iters: self.training.em_max_iters,
        }
    }

    pub fn eval_params(&self) -> EvalParams {
        EvalParams {
            horizon: self.evaluation.horizon,
            n_sims: self.evaluation.n_sims,
        }
    }

    pub fn bound_positions(&self) -> Vec<i64> {
        if self.bound.positions.is_empty() {
            vec![0]
        } else {
            self.bound.positions.clone()
        }
    }
}

pub fn resolve(config_dir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        config_dir.join(path)
    }
}

pub fn load_model(path: &Path) -> Result<HiddenMarkovModel, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(path.display().to_string(), e))?;
    HiddenMarkovModel::from_json_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
