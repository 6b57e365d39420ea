//! Experiment driver: config resolution, run directories and the commands
//! behind the `hazboard` binary.

pub mod config;
pub mod run;

use std::path::{Path, PathBuf};

use hazboard::ExperimentConfig;

pub use config::ConfigError;

/// Exit status for a failed command: 2 for configuration problems, 3 for a
/// numerical abort, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        match cause.downcast_ref::<hazboard::Error>() {
            Some(hazboard::Error::Config { .. }) => return 2,
            Some(hazboard::Error::NonFinite(_)) => return 3,
            _ => {}
        }
    }
    1
}

/// Loads a config file (or the defaults), applies overrides and the seed
/// flags. `seed` wins over `seeds`; `seeds = n` means seeds `0..n`.
pub fn load_config(
    path: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
    seeds: Option<u64>,
) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = config::load(path, overrides)?;
    if let Some(n) = seeds {
        if n == 0 {
            return Err(ConfigError("--seeds must be at least 1".into()));
        }
        cfg.run.seeds = (0..n).collect();
    }
    if let Some(s) = seed {
        cfg.run.seeds = vec![s];
    }
    Ok(cfg)
}

/// `--out`, else `run.out_dir`, else `runs/<variant>`.
pub fn output_dir(cfg: &ExperimentConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| cfg.run.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs").join(cfg.run.variant.name()))
}
