//! Subcommand implementations. All outputs are written atomically
//! (temp file + rename) so interrupted runs never leave partial files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sep_pomdp_core::baum_welch::baum_welch_restarts;
use sep_pomdp_core::evaluation::{
    self, construct_policy, derive_seed, evaluate_policy, evaluate_policy_from, seed_streams,
    EvaluationStart, GapExperimentConfig,
};
use sep_pomdp_core::hmm::ObservationSequence;
use sep_pomdp_core::inventory::check_attainability;
use sep_pomdp_core::solvers::{
    default_position_range, information_relaxation_values, relaxation_lower_bound,
};
use sep_pomdp_core::svm::partition_report;
use sep_pomdp_core::{BasestockClassifier, InventoryModel};

use crate::config::{load_model, resolve, ExperimentConfig};
use crate::CliError;

/// Additional seed streams used only by the CLI (the experiment streams
/// live in the core crate next to the experiment itself).
mod cli_streams {
    /// `train-hmm` restarts: `TRAIN_CLI + restart`.
    pub const TRAIN_CLI: u64 = 0x0600_0000;
    /// `build-policy` on an explicitly supplied model.
    pub const POLICY_CLI: u64 = 0x0700_0000;
    /// `bound` upper-bound evaluations: `BOUND_CLI + row`.
    pub const BOUND_CLI: u64 = 0x0800_0000;
}

struct Context {
    cfg: ExperimentConfig,
    config_dir: PathBuf,
    seed: u64,
}

fn load(config_path: &Path, seed_override: Option<u64>) -> Result<Context, CliError> {
    let cfg = ExperimentConfig::load(config_path)?;
    let config_dir = config_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let seed = seed_override.unwrap_or(cfg.seed);
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| CliError::io(cfg.output_dir.display().to_string(), e))?;
    Ok(Context { cfg, config_dir, seed })
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(|e| CliError::io(tmp.display().to_string(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    Ok(())
}

/// `gen-data`: one trajectory CSV per configured dataset size, using the
/// same seed fan-out as the experiment so the files match its inputs.
pub fn gen_data(config_path: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let ctx = load(config_path, seed)?;
    let model = ctx.cfg.true_model(&ctx.config_dir)?;
    let horizon = ctx.cfg.evaluation.horizon;
    let datasets = evaluation::generate_datasets(
        &model,
        &ctx.cfg.training.dataset_sizes,
        horizon,
        ctx.seed,
    )?;
    for (&size, data) in ctx.cfg.training.dataset_sizes.iter().zip(&datasets) {
        let mut csv = String::from("traj_id,t,y,x\n");
        let mut rows = 0usize;
        for (traj_id, seq) in data.iter().enumerate() {
            for (t, (&y, &x)) in seq.demands.iter().zip(&seq.aods).enumerate() {
                let _ = writeln!(csv, "{},{},{},{}", traj_id, t + 1, y, x);
                rows += 1;
            }
        }
        let path = ctx.cfg.output_dir.join(format!("data_size_{size}.csv"));
        write_atomic(&path, &csv)?;
        println!("{}: {rows} rows", path.display());
    }
    Ok(())
}

fn read_dataset(path: &Path) -> Result<Vec<ObservationSequence>, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("traj_id,t,y,x") => {}
        _ => {
            return Err(CliError::Config(format!(
                "{}: expected header traj_id,t,y,x",
                path.display()
            )))
        }
    }
    let mut by_traj: std::collections::BTreeMap<u64, (Vec<i64>, Vec<i64>)> = Default::default();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parsed: Option<(u64, i64, i64)> = (|| {
            if fields.len() != 4 {
                return None;
            }
            Some((
                fields[0].trim().parse().ok()?,
                fields[2].trim().parse().ok()?,
                fields[3].trim().parse().ok()?,
            ))
        })();
        let Some((traj, y, x)) = parsed else {
            return Err(CliError::Config(format!(
                "{}: malformed row {}",
                path.display(),
                lineno + 2
            )));
        };
        let entry = by_traj.entry(traj).or_default();
        entry.0.push(y);
        entry.1.push(x);
    }
    if by_traj.is_empty() {
        return Err(CliError::Config(format!("{}: no data rows", path.display())));
    }
    by_traj
        .into_values()
        .map(|(demands, aods)| ObservationSequence::new(demands, aods).map_err(Into::into))
        .collect()
}

/// `train-hmm`: EM with restarts on a dataset file, keeping the fit with
/// the best final log-likelihood.
pub fn train_hmm(
    config_path: &Path,
    seed: Option<u64>,
    data_path: &Path,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let ctx = load(config_path, seed)?;
    let data = read_dataset(data_path)?;
    let convention = ctx.cfg.true_model(&ctx.config_dir)?.convention();
    let seeds: Vec<u64> = (0..ctx.cfg.training.n_restarts)
        .map(|r| derive_seed(ctx.seed, cli_streams::TRAIN_CLI + r as u64))
        .collect();
    let (model, trace, winner) = baum_welch_restarts(
        &data,
        ctx.cfg.training.n_states,
        &seeds,
        ctx.cfg.training.em_tol,
        ctx.cfg.training.em_max_iters,
        convention,
    )?;
    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.cfg.output_dir.join("hmm_trained.json"));
    write_atomic(&out_path, &model.to_json_string()?)?;
    println!(
        "{}: best of {} restarts (restart {winner}), {} EM iterations, final log-likelihood {}",
        out_path.display(),
        seeds.len(),
        trace.len(),
        trace.last().unwrap()
    );
    Ok(())
}

/// `build-policy`: belief grid + Monte Carlo labels + one trained
/// classifier and partition mesh per configured C, plus an attainability
/// report for the base-stock hypothesis.
pub fn build_policy(
    config_path: &Path,
    seed: Option<u64>,
    model_path: Option<&Path>,
) -> Result<(), CliError> {
    let ctx = load(config_path, seed)?;
    let (model, policy_seed) = match model_path {
        None => (
            ctx.cfg.true_model(&ctx.config_dir)?,
            derive_seed(ctx.seed, seed_streams::TRUE_POLICY),
        ),
        Some(p) => (
            load_model(&resolve(&ctx.config_dir, p))?,
            derive_seed(ctx.seed, cli_streams::POLICY_CLI),
        ),
    };
    let params = ctx.cfg.inventory_params()?;
    let grid_params = ctx.cfg.grid_params();
    for &c in &ctx.cfg.svm.c_list {
        let built = construct_policy(&model, &params, &grid_params, &ctx.cfg.svm_params(c), policy_seed)?;
        let c_tag = format!("{c}").replace('.', "_");
        if c == ctx.cfg.svm.c_list[0] {
            // The grid and labels are C-independent; write them once.
            let grid_path = ctx.cfg.output_dir.join("grid.json");
            write_atomic(&grid_path, &built.grid.to_json_string()?)?;
            println!(
                "{}: {} grid points from {} simulated beliefs",
                grid_path.display(),
                built.grid.len(),
                grid_params.n_steps
            );
            let report =
                check_attainability(&model, &built.grid, params.tau, params.h_tilde, params.p_tilde)?;
            println!(
                "attainability: holds={} ({} checks, {} violations)",
                report.holds,
                report.checked,
                report.violations.len()
            );
        }
        let clf_path = ctx.cfg.output_dir.join(format!("classifier_c{c_tag}.json"));
        write_atomic(&clf_path, &built.classifier.to_json_string()?)?;
        let mesh = partition_report(&built.classifier, ctx.cfg.svm.partition_resolution)?;
        let mut csv = String::new();
        for d in 0..built.classifier.dim() {
            let _ = write!(csv, "b{},", d + 1);
        }
        csv.push_str("label\n");
        for (point, label) in &mesh.rows {
            for p in point.probs() {
                let _ = write!(csv, "{p},");
            }
            let _ = writeln!(csv, "{label}");
        }
        let mesh_path = ctx.cfg.output_dir.join(format!("partition_c{c_tag}.csv"));
        write_atomic(&mesh_path, &csv)?;
        println!(
            "{}: {} classes over {} mesh points",
            clf_path.display(),
            built.classifier.classes().len(),
            mesh.rows.len()
        );
    }
    Ok(())
}

fn load_classifier(path: &Path) -> Result<BasestockClassifier, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    BasestockClassifier::from_json_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// `evaluate`: Monte Carlo evaluation of a stored classifier.
pub fn evaluate(
    config_path: &Path,
    seed: Option<u64>,
    classifier_path: &Path,
    model_path: Option<&Path>,
) -> Result<(), CliError> {
    let ctx = load(config_path, seed)?;
    let true_model = ctx.cfg.true_model(&ctx.config_dir)?;
    let eval_model = match model_path {
        None => true_model.clone(),
        Some(p) => load_model(&resolve(&ctx.config_dir, p))?,
    };
    let classifier = load_classifier(&resolve(&ctx.config_dir, classifier_path))?;
    if classifier.dim() != eval_model.n_states() {
        return Err(CliError::Config(format!(
            "classifier expects {} states, evaluation model has {}",
            classifier.dim(),
            eval_model.n_states()
        )));
    }
    let report = evaluate_policy(
        &true_model,
        &eval_model,
        &classifier,
        &ctx.cfg.inventory_params()?,
        ctx.cfg.evaluation.horizon,
        ctx.cfg.evaluation.n_sims,
        derive_seed(ctx.seed, seed_streams::EVAL),
    )?;
    let csv = format!(
        "mean_cost,std_error,n_sims,horizon,belief_resets\n{},{},{},{},{}\n",
        report.mean_cost, report.std_error, report.n_sims, report.horizon, report.belief_resets
    );
    let path = ctx.cfg.output_dir.join("evaluation.csv");
    write_atomic(&path, &csv)?;
    println!(
        "{}: mean {} +- {} ({} sims, {} belief resets)",
        path.display(),
        report.mean_cost,
        report.std_error,
        report.n_sims,
        report.belief_resets
    );
    Ok(())
}

/// `experiment`: the full gap experiment, flushing both CSVs after every
/// completed dataset size.
pub fn experiment(config_path: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let ctx = load(config_path, seed)?;
    let cfg = GapExperimentConfig {
        true_model: ctx.cfg.true_model(&ctx.config_dir)?,
        inventory: ctx.cfg.inventory_params()?,
        grid: ctx.cfg.grid_params(),
        svm: ctx.cfg.svm_params(ctx.cfg.policy_c()),
        training: ctx.cfg.training_params(),
        evaluation: ctx.cfg.eval_params(),
        seed: ctx.seed,
    };
    let rows_path = ctx.cfg.output_dir.join("experiment_report.csv");
    let summary_path = ctx.cfg.output_dir.join("experiment_summary.csv");
    let table =
        evaluation::optimality_gap_experiment_with_progress(&cfg, |partial| {
            write_atomic(&rows_path, &partial.rows_csv()).map_err(flush_error)?;
            write_atomic(&summary_path, &partial.summary_csv()).map_err(flush_error)?;
            let done = partial.summaries.last().expect("at least one size");
            eprintln!(
                "size {:>5}: best {} mean {} (true {})",
                done.dataset_size, done.best_cost, done.mean_cost, partial.true_cost
            );
            Ok(())
        })
        .map_err(unflush_error)?;
    println!(
        "{}: {} rows; baseline cost {} +- {}",
        rows_path.display(),
        table.rows.len(),
        table.true_cost,
        table.true_std_error
    );
    println!("{}: {} sizes", summary_path.display(), table.summaries.len());
    Ok(())
}

// The progress callback crosses the core error type; tunnel CliError
// through an InvalidArgument payload and unwrap it on the way out.
fn flush_error(e: CliError) -> sep_pomdp_core::Error {
    sep_pomdp_core::Error::InvalidArgument(format!("__flush__{e}"))
}

fn unflush_error(e: sep_pomdp_core::Error) -> CliError {
    match &e {
        sep_pomdp_core::Error::InvalidArgument(msg) if msg.starts_with("__flush__") => {
            CliError::Io {
                path: msg.trim_start_matches("__flush__").to_string(),
                source: std::io::Error::other("failed to flush partial results"),
            }
        }
        _ => e.into(),
    }
}

/// `bound`: information-relaxation lower bounds at every grid belief and
/// configured position, paired with Monte Carlo upper bounds from the SVM
/// policy started at the same (position, belief).
pub fn bound(
    config_path: &Path,
    seed: Option<u64>,
    model_path: Option<&Path>,
) -> Result<(), CliError> {
    let ctx = load(config_path, seed)?;
    let (model, policy_seed) = match model_path {
        None => (
            ctx.cfg.true_model(&ctx.config_dir)?,
            derive_seed(ctx.seed, seed_streams::TRUE_POLICY),
        ),
        Some(p) => (
            load_model(&resolve(&ctx.config_dir, p))?,
            derive_seed(ctx.seed, cli_streams::POLICY_CLI),
        ),
    };
    let params = ctx.cfg.inventory_params()?;
    let inv = InventoryModel::new(
        model.clone(),
        params.tau,
        params.h_tilde,
        params.p_tilde,
        params.beta,
    )?;
    let built = construct_policy(
        &model,
        &params,
        &ctx.cfg.grid_params(),
        &ctx.cfg.svm_params(ctx.cfg.policy_c()),
        policy_seed,
    )?;
    let mut range = default_position_range(&inv);
    let positions = ctx.cfg.bound_positions();
    for &p in &positions {
        range = (range.0.min(p), range.1.max(p));
    }
    let relaxed = information_relaxation_values(&inv, range)?;
    if !relaxed.converged {
        return Err(CliError::NonConverged(
            "value iteration for the relaxed problem hit its iteration cap".into(),
        ));
    }
    let horizon = ctx.cfg.bound.horizon.unwrap_or(ctx.cfg.evaluation.horizon);
    let n_sims = ctx.cfg.bound.n_sims.unwrap_or(ctx.cfg.evaluation.n_sims);
    let mut csv = String::from("position,grid_index,lower_bound,policy_cost,std_error\n");
    let mut row_index = 0u64;
    for &position in &positions {
        for (g, belief) in built.grid.points().iter().enumerate() {
            let lower = relaxation_lower_bound(&relaxed, belief, position)?;
            let start = EvaluationStart {
                position,
                filter_belief: belief.clone(),
                latent_belief: belief.clone(),
            };
            let report = evaluate_policy_from(
                &model,
                &model,
                &built.classifier,
                &params,
                &start,
                horizon,
                n_sims,
                derive_seed(ctx.seed, cli_streams::BOUND_CLI + row_index),
                false,
            )?;
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                position, g, lower, report.mean_cost, report.std_error
            );
            row_index += 1;
        }
    }
    let path = ctx.cfg.output_dir.join("bound.csv");
    write_atomic(&path, &csv)?;
    println!(
        "{}: {} rows ({} positions x {} grid points)",
        path.display(),
        row_index,
        positions.len(),
        built.grid.len()
    );
    Ok(())
}
