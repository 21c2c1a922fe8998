//! Stage-by-stage pipeline over a seeded phantom cohort: generate, train,
//! embed, correlate, shap, lrcp and report, each writing CSV and raw volume
//! files under one output directory.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod stage;

use std::path::{Path, PathBuf};

pub use config::PipelineConfig;
pub use error::CliError;
pub use stage::Stage;

/// Reads `path` (or the defaults) and applies command-line overrides.
pub fn load_config(path: Option<&Path>, seed: Option<u64>, out: Option<PathBuf>) -> Result<PipelineConfig, CliError> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| config::ConfigError::Invalid(format!("cannot read {}: {e}", p.display())))?;
            PipelineConfig::parse(&text)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    Ok(cfg)
}

/// Runs `stages` in order under the directory lock, reporting each on
/// `progress`.
pub fn execute(cfg: &PipelineConfig, stages: &[Stage], force: bool, mut progress: impl FnMut(Stage, bool)) -> Result<(), CliError> {
    let _lock = stage::DirLock::acquire(&cfg.out)?;
    for &s in stages {
        let ran = pipeline::run_stage(&cfg.out, cfg, s, force)?;
        progress(s, ran);
    }
    Ok(())
}
