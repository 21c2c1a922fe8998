//! 3D convolutional autoencoder.
//!
//! Encoder: three stride-2 convolutions (1→16→32→64 channels), each followed
//! by ReLU and then batch normalization. Decoder: three transposed
//! convolutions mirroring the encoder (64→32→16→1); the last one ends in a
//! sigmoid with no normalization. All arithmetic is f64.

pub mod conv;
pub mod loss;
pub mod model_io;
pub mod net;
pub mod train;

use thiserror::Error;

pub use loss::LossKind;
pub use model_io::{decode_model, encode_model};
pub use net::{architecture, forward_batch, level_dims, AEParams, LayerSpec, Mode};
pub use train::{train, TrainConfig, TrainReport};

use crate::volume::{Cohort, Volume, VolumeError};

#[derive(Debug, Error)]
pub enum AutoencoderError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, loss: f64 },
    #[error("model format: {0}")]
    Format(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Flattened activation with its channel and spatial shape.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivation {
    pub channels: usize,
    pub dims: [usize; 3],
    pub values: Vec<f64>,
}

/// Outputs of the three encoder layers for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    pub layer1: LayerActivation,
    pub layer2: LayerActivation,
    pub latent: LayerActivation,
}

impl ActivationSet {
    pub fn layer(&self, index: usize) -> &LayerActivation {
        match index {
            0 => &self.layer1,
            1 => &self.layer2,
            _ => &self.latent,
        }
    }
}

fn activation_set(pass: &net::ForwardPass, sample: usize) -> ActivationSet {
    let make = |l: usize| {
        let dims = pass.encoder_dims[l];
        let channels = net::ENCODER_CHANNELS[l + 1];
        let n = channels * dims[0] * dims[1] * dims[2];
        LayerActivation { channels, dims, values: pass.encoder_outputs[l][sample * n..(sample + 1) * n].to_vec() }
    };
    ActivationSet { layer1: make(0), layer2: make(1), latent: make(2) }
}

/// Single-volume forward pass.
pub fn forward(volume: &Volume, params: &AEParams, mode: Mode) -> Result<(Volume, ActivationSet), AutoencoderError> {
    if volume.dims() != params.input_dims {
        return Err(AutoencoderError::Shape(format!(
            "volume dims {:?} do not match network input {:?}",
            volume.dims(),
            params.input_dims
        )));
    }
    let x = volume.to_f64();
    let pass = forward_batch(params, &[&x], mode)?;
    let recon = Volume::from_f64_clamped(volume.dims(), pass.sample(0))?;
    Ok((recon, activation_set(&pass, 0)))
}

/// Eval-mode activations for every subject, in cohort order.
pub fn extract_activations(cohort: &Cohort, params: &AEParams) -> Result<Vec<ActivationSet>, AutoencoderError> {
    cohort
        .subjects()
        .iter()
        .map(|s| {
            let x = s.volume.to_f64();
            let pass = forward_batch(params, &[&x], Mode::Eval)?;
            Ok(activation_set(&pass, 0))
        })
        .collect()
}

/// Sum of squared voxel differences between each subject and its eval-mode
/// reconstruction.
pub fn total_reconstruction_error(cohort: &Cohort, params: &AEParams) -> Result<Vec<f64>, AutoencoderError> {
    cohort
        .subjects()
        .iter()
        .map(|s| {
            let x = s.volume.to_f64();
            let pass = forward_batch(params, &[&x], Mode::Eval)?;
            Ok(sum_squared_error(pass.sample(0), &x))
        })
        .collect()
}

pub fn sum_squared_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::AtlasMap;

    #[test]
    fn desk_scale_activation_shapes() {
        let p = AEParams::init([32, 32, 32], 0).unwrap();
        let v = Volume::filled([32, 32, 32], 0.4).unwrap();
        let (recon, acts) = forward(&v, &p, Mode::Eval).unwrap();
        assert_eq!(recon.dims(), [32, 32, 32]);
        assert_eq!((acts.layer1.channels, acts.layer1.dims), (16, [16, 16, 16]));
        assert_eq!((acts.layer2.channels, acts.layer2.dims), (32, [8, 8, 8]));
        assert_eq!((acts.latent.channels, acts.latent.dims), (64, [4, 4, 4]));
        assert_eq!(acts.latent.values.len(), 4096);
    }

    #[test]
    fn full_scale_latent_length() {
        let levels = level_dims([121, 145, 121]).unwrap();
        let l = levels[3];
        assert_eq!(64 * l[0] * l[1] * l[2], 311_296);
    }

    #[test]
    fn reconstruction_in_open_unit_interval_and_repeatable() {
        let p = AEParams::init([9, 9, 9], 5).unwrap();
        let vals: Vec<f32> = (0..729).map(|i| (i % 17) as f32 / 17.0).collect();
        let v = Volume::new([9, 9, 9], vals).unwrap();
        let x = v.to_f64();
        let a = forward_batch(&p, &[&x], Mode::Eval).unwrap();
        assert!(a.reconstruction.iter().all(|&r| r > 0.0 && r < 1.0));
        let b = forward_batch(&p, &[&x], Mode::Eval).unwrap();
        assert!(a.reconstruction.iter().zip(&b.reconstruction).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn identical_subjects_identical_activations() {
        let atlas = AtlasMap::new([5, 5, 5], vec![1; 125], 1).unwrap();
        let v = Volume::filled([5, 5, 5], 0.3).unwrap();
        let subjects = (0..2)
            .map(|i| crate::volume::Subject { id: format!("s{i}"), class_label: crate::ClassLabel::Nor, volume: v.clone() })
            .collect();
        let cohort = Cohort::new(subjects, atlas, 0).unwrap();
        let p = AEParams::init([5, 5, 5], 2).unwrap();
        let acts = extract_activations(&cohort, &p).unwrap();
        assert_eq!(acts[0], acts[1]);
    }

    #[test]
    fn sum_squared_error_counts() {
        let mut a = vec![0.5; 100];
        let b = a.clone();
        for v in a.iter_mut().take(8) {
            *v += 0.1;
        }
        assert!((sum_squared_error(&a, &b) - 0.08).abs() < 1e-12);
        assert_eq!(sum_squared_error(&b, &b), 0.0);
    }
}
