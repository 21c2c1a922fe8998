//! Unsupervised latent-space analysis of volumetric cohorts.
//!
//! The pipeline trains a 3D convolutional autoencoder on a cohort of
//! volumes, projects intermediate activations to three components per layer,
//! relates those components to atlas-region mean intensities, attributes
//! reconstruction error to regions with exact tree SHAP, and validates every
//! association with concentration-bound corrected risks.

pub mod attribution;
pub mod autoencoder;
pub mod io;
pub mod lrcp;
pub mod phantom;
pub mod projection;
pub mod region_stats;
pub mod seed;
pub mod validation;
pub mod volume;

pub use volume::{AtlasMap, ClassLabel, Cohort, RegionProfileMatrix, Subject, Volume};
