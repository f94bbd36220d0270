use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_sep-pomdp")
}

/// Writes a small, fast experiment config rooted at `dir` and returns its
/// path.
pub fn write_quick_config(dir: &Path) -> PathBuf {
    let out_dir = dir.join("out");
    let config = format!(
        r#"{{
  "true_model": {{"inline": {{
    "n_states": 2,
    "transition": [0.8, 0.2, 0.3, 0.7],
    "emission": [
      {{"1,0": 0.6, "2,0": 0.3, "3,0": 0.1}},
      {{"1,0": 0.1, "2,0": 0.3, "3,0": 0.6}}
    ],
    "emission_convention": "condition_on_next",
    "y_support": [1, 2, 3],
    "x_support": [0]
  }}}},
  "inventory": {{"tau": 2, "h_tilde": 1.0, "p_tilde": 3.0, "beta": 0.9}},
  "grid": {{"N": 300, "d": 2, "K": 20, "label_samples": 300, "restarts": 1}},
  "svm": {{"C_list": [50.0], "max_epochs": 80, "tol": 1e-8, "partition_resolution": 12}},
  "training": {{"n_states": 2, "dataset_sizes": [3], "n_restarts": 2, "em_tol": 1e-4, "em_max_iters": 30}},
  "evaluation": {{"horizon": 20, "n_sims": 40}},
  "bound": {{"positions": [0], "n_sims": 30, "horizon": 20}},
  "seed": 11,
  "output_dir": {out_dir:?}
}}"#,
        out_dir = out_dir.display()
    );
    let path = dir.join("config.json");
    std::fs::write(&path, config).unwrap();
    path
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("failed to launch the CLI binary")
}

pub fn run_ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

// Each integration-test target compiles this module separately; not every
// target uses every helper.
#[allow(dead_code)]
pub fn read_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
}
