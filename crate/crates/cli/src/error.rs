use std::path::PathBuf;

use lrcp_core::attribution::AttributionError;
use lrcp_core::autoencoder::AutoencoderError;
use lrcp_core::io::FormatError;
use lrcp_core::lrcp::LrcpError;
use lrcp_core::phantom::PhantomError;
use lrcp_core::projection::ProjectionError;
use lrcp_core::region_stats::StatsError;
use lrcp_core::validation::ValidationError;
use thiserror::Error;

use crate::config::ConfigError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("dependency: {0}")]
    Dependency(String),
    #[error("numeric failure in {stage}: {msg}")]
    Numeric { stage: &'static str, msg: String },
    #[error("{stage}: {msg}")]
    Stage { stage: &'static str, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Format(#[from] FormatError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Dependency(_) => 3,
            CliError::Numeric { .. } => 4,
            CliError::Stage { .. } | CliError::Io { .. } | CliError::Format(_) => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

/// Core errors that mean a computation produced NaN or infinity.
pub trait NumericKind: std::fmt::Display {
    fn is_numeric(&self) -> bool {
        false
    }
}

impl NumericKind for AutoencoderError {
    fn is_numeric(&self) -> bool {
        matches!(self, AutoencoderError::NonFinite { .. })
    }
}

impl NumericKind for ProjectionError {
    fn is_numeric(&self) -> bool {
        matches!(self, ProjectionError::NonFinite(_))
    }
}

impl NumericKind for AttributionError {
    fn is_numeric(&self) -> bool {
        matches!(self, AttributionError::NonFinite)
    }
}

impl NumericKind for StatsError {}
impl NumericKind for LrcpError {}
impl NumericKind for PhantomError {}
impl NumericKind for ValidationError {}
impl NumericKind for lrcp_core::volume::VolumeError {}

/// Tags a core error with the stage it came from.
pub fn in_stage<E: NumericKind>(stage: &'static str) -> impl Fn(E) -> CliError {
    move |e| {
        if e.is_numeric() {
            CliError::Numeric { stage, msg: e.to_string() }
        } else {
            CliError::Stage { stage, msg: e.to_string() }
        }
    }
}
