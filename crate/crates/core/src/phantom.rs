//! Seeded phantom cohorts with planted region/class effects.
//!
//! The atlas is a Voronoi partition of `region_count` seeded centroids drawn
//! from an ellipsoidal foreground mask. Each subject is the template plus the
//! planted shifts for its class, per-subject regional offsets, and
//! Gaussian-smoothed i.i.d. voxel noise. Background voxels stay at 0.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::seed;
use crate::volume::{voxel_count, AtlasMap, ClassLabel, Cohort, Subject, Volume, VolumeError};

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid phantom configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Additive intensity shift of one region for one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedEffect {
    pub region: u32,
    pub class: ClassLabel,
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    pub region_count: usize,
    pub class_counts: BTreeMap<ClassLabel, usize>,
    pub effects: Vec<PlantedEffect>,
    /// Per-voxel i.i.d. noise sigma, before smoothing.
    pub noise_sigma: f64,
    /// Gaussian blur sigma in voxels applied to the noise field; 0 disables.
    pub smoothness: f64,
    /// Per-subject, per-region random offset sigma (inter-subject variability).
    pub subject_sigma: f64,
    /// Each subject's effect multiplier is drawn uniformly from
    /// `[1 - jitter, 1 + jitter]`.
    pub severity_jitter: f64,
    /// Restrict the foreground to an inscribed ellipsoid.
    pub ellipsoid_mask: bool,
    pub seed: u64,
}

impl PhantomConfig {
    /// 32³ volume, 32 regions, 30 subjects per class, no planted effects.
    pub fn desk() -> Self {
        Self {
            dims: [32, 32, 32],
            region_count: 32,
            class_counts: ClassLabel::ALL.iter().map(|&c| (c, 30)).collect(),
            effects: Vec::new(),
            noise_sigma: 0.02,
            smoothness: 1.0,
            subject_sigma: 0.0,
            severity_jitter: 0.0,
            ellipsoid_mask: true,
            seed: 0,
        }
    }

    /// Class sizes of the clinical cohort the method was developed on.
    pub fn clinical_class_counts() -> BTreeMap<ClassLabel, usize> {
        [
            (ClassLabel::Nor, 229),
            (ClassLabel::Mci, 252),
            (ClassLabel::Mcic, 149),
            (ClassLabel::Ad, 188),
        ]
        .into_iter()
        .collect()
    }

    pub fn total_subjects(&self) -> usize {
        self.class_counts.values().sum()
    }

    fn validate(&self) -> Result<(), PhantomError> {
        let cfg = |m: &str| Err(PhantomError::Config(m.to_string()));
        voxel_count(self.dims)?;
        if self.region_count < 2 {
            return cfg("region_count must be at least 2");
        }
        if self.class_counts.values().all(|&n| n == 0) {
            return cfg("class_counts must contain at least one subject");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return cfg("noise_sigma must be finite and >= 0");
        }
        if !(self.smoothness >= 0.0 && self.smoothness.is_finite()) {
            return cfg("smoothness must be finite and >= 0");
        }
        if !(self.subject_sigma >= 0.0 && self.subject_sigma.is_finite()) {
            return cfg("subject_sigma must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.severity_jitter) {
            return cfg("severity_jitter must lie in [0, 1]");
        }
        for e in &self.effects {
            if e.region == 0 || e.region as usize > self.region_count {
                return Err(PhantomError::Config(format!("effect region {} out of range", e.region)));
            }
            if !(-1.0..=1.0).contains(&e.shift) {
                return Err(PhantomError::Config(format!("effect shift {} outside [-1, 1]", e.shift)));
            }
        }
        Ok(())
    }
}

/// Ellipsoid foreground (semi-axes 0.45·dim) or the full grid.
fn foreground(dims: [usize; 3], ellipsoid: bool) -> Vec<bool> {
    let n = dims[0] * dims[1] * dims[2];
    if !ellipsoid {
        return vec![true; n];
    }
    let c = dims.map(|d| (d as f64 - 1.0) / 2.0);
    let a = dims.map(|d| (0.45 * d as f64).max(0.5));
    let mut mask = Vec::with_capacity(n);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x as f64, y as f64, z as f64];
                let q: f64 = (0..3).map(|k| ((p[k] - c[k]) / a[k]).powi(2)).sum();
                mask.push(q <= 1.0);
            }
        }
    }
    mask
}

fn coords(idx: usize, dims: [usize; 3]) -> [f64; 3] {
    let x = idx % dims[0];
    let y = (idx / dims[0]) % dims[1];
    let z = idx / (dims[0] * dims[1]);
    [x as f64, y as f64, z as f64]
}

/// Voronoi atlas over the foreground; ties go to the lower region id.
pub fn generate_atlas(
    dims: [usize; 3],
    region_count: usize,
    ellipsoid: bool,
    seed: u64,
) -> Result<AtlasMap, PhantomError> {
    let mask = foreground(dims, ellipsoid);
    let fg: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    if fg.len() < region_count {
        return Err(PhantomError::Config(format!(
            "dims {:?} hold {} foreground voxels, too few for {} regions",
            dims,
            fg.len(),
            region_count
        )));
    }
    let mut rng = seed::rng(seed::derive_str(seed, "atlas"));
    let mut centroid_idx: Vec<usize> = sample(&mut rng, fg.len(), region_count)
        .into_iter()
        .map(|k| fg[k])
        .collect();
    centroid_idx.sort_unstable();
    let centroids: Vec<[f64; 3]> = centroid_idx.iter().map(|&i| coords(i, dims)).collect();
    let labels = mask
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            if !m {
                return 0;
            }
            let p = coords(i, dims);
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (r, c) in centroids.iter().enumerate() {
                let d = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
                if d < best_d {
                    best_d = d;
                    best = r;
                }
            }
            best as u32 + 1
        })
        .collect();
    Ok(AtlasMap::new(dims, labels, region_count as u32)?)
}

/// Separable Gaussian blur, kernel truncated at 3σ and renormalized at the
/// borders.
pub fn gaussian_blur(field: &mut [f64], dims: [usize; 3], sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let strides = [1, dims[0], dims[0] * dims[1]];
    let mut line = Vec::new();
    for axis in 0..3 {
        let len = dims[axis];
        let stride = strides[axis];
        let (o1, o2) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for a in 0..dims[o1] {
            for b in 0..dims[o2] {
                let base = a * strides[o1] + b * strides[o2];
                line.clear();
                line.extend((0..len).map(|i| field[base + i * stride]));
                for i in 0..len as isize {
                    let mut acc = 0.0;
                    let mut wsum = 0.0;
                    for (ki, k) in (-radius..=radius).enumerate() {
                        let j = i + k;
                        if j >= 0 && j < len as isize {
                            acc += kernel[ki] * line[j as usize];
                            wsum += kernel[ki];
                        }
                    }
                    field[base + i as usize * stride] = acc / wsum;
                }
            }
        }
    }
}

/// Per-region template intensities, index 0 holding region 1.
pub fn template_intensities(region_count: usize, seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed::derive_str(seed, "template"));
    (0..region_count).map(|_| rng.random_range(0.35..0.65)).collect()
}

pub fn generate_phantom_cohort(config: &PhantomConfig) -> Result<Cohort, PhantomError> {
    config.validate()?;
    let atlas = generate_atlas(config.dims, config.region_count, config.ellipsoid_mask, config.seed)?;
    let base = template_intensities(config.region_count, config.seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");

    let mut subjects = Vec::with_capacity(config.total_subjects());
    let mut index = 0u64;
    for (&class, &count) in &config.class_counts {
        for _ in 0..count {
            let mut rng = seed::rng(seed::derive(seed::derive_str(config.seed, "subject"), index));
            let severity = if config.severity_jitter > 0.0 {
                rng.random_range(1.0 - config.severity_jitter..=1.0 + config.severity_jitter)
            } else {
                1.0
            };
            let mut region_level: Vec<f64> = base
                .iter()
                .map(|&b| {
                    let offset = if config.subject_sigma > 0.0 {
                        config.subject_sigma * noise.sample(&mut rng)
                    } else {
                        0.0
                    };
                    b + offset
                })
                .collect();
            for e in config.effects.iter().filter(|e| e.class == class) {
                region_level[e.region as usize - 1] += severity * e.shift;
            }
            for v in &mut region_level {
                *v = v.clamp(0.0, 1.0);
            }

            let mut noise_field: Vec<f64> = if config.noise_sigma > 0.0 {
                (0..atlas.labels().len())
                    .map(|_| config.noise_sigma * noise.sample(&mut rng))
                    .collect()
            } else {
                vec![0.0; atlas.labels().len()]
            };
            gaussian_blur(&mut noise_field, config.dims, config.smoothness);

            let values: Vec<f64> = atlas
                .labels()
                .iter()
                .zip(&noise_field)
                .map(|(&l, &n)| if l == 0 { 0.0 } else { region_level[l as usize - 1] + n })
                .collect();
            subjects.push(Subject {
                id: format!("sub-{index:04}"),
                class_label: class,
                volume: Volume::from_f64_clamped(config.dims, &values)?,
            });
            index += 1;
        }
    }
    Ok(Cohort::new(subjects, atlas, config.seed)?)
}
