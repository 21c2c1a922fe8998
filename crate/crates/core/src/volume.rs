//! Volumes, atlases, cohorts and region statistics.
//!
//! A [`Volume`] is a dense scalar field stored x-fastest. An [`AtlasMap`]
//! assigns each voxel a region id, with 0 reserved for background. All
//! region statistics ignore background voxels.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VolumeError {
    #[error("volume dimensions must be strictly positive, got {0:?}")]
    ZeroDim([usize; 3]),
    #[error("dimension product overflows: {0:?}")]
    DimOverflow([usize; 3]),
    #[error("expected {expected} voxels for the given dims, got {actual}")]
    VoxelCount { expected: usize, actual: usize },
    #[error("voxel {index} has value {value} outside [0, 1]")]
    OutOfRange { index: usize, value: f32 },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimMismatch { left: [usize; 3], right: [usize; 3] },
    #[error("label {label} at voxel {index} exceeds region count {region_count}")]
    LabelOutOfRange { index: usize, label: u32, region_count: u32 },
    #[error("region {0} has no voxels")]
    EmptyRegion(u32),
    #[error("atlas has no foreground regions")]
    NoRegions,
    #[error("class label {0} is not one of 0..=3")]
    BadClassLabel(u32),
    #[error("duplicate subject id {0:?}")]
    DuplicateSubject(String),
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("requested class {0} is absent from the cohort")]
    MissingClass(ClassLabel),
}

/// Voxel count for `dims`, rejecting zero sizes and overflow.
pub fn voxel_count(dims: [usize; 3]) -> Result<usize, VolumeError> {
    if dims.iter().any(|&d| d == 0) {
        return Err(VolumeError::ZeroDim(dims));
    }
    dims[0]
        .checked_mul(dims[1])
        .and_then(|v| v.checked_mul(dims[2]))
        .ok_or(VolumeError::DimOverflow(dims))
}

/// Dense 3D intensity field with every voxel in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    voxels: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], voxels: Vec<f32>) -> Result<Self, VolumeError> {
        let expected = voxel_count(dims)?;
        if voxels.len() != expected {
            return Err(VolumeError::VoxelCount { expected, actual: voxels.len() });
        }
        if let Some((index, &value)) = voxels
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(VolumeError::OutOfRange { index, value });
        }
        Ok(Self { dims, voxels })
    }

    /// Builds a volume from f64 values, clamping into `[0, 1]`.
    pub fn from_f64_clamped(dims: [usize; 3], values: &[f64]) -> Result<Self, VolumeError> {
        let voxels = values
            .iter()
            .map(|&v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) as f32 })
            .collect();
        Self::new(dims, voxels)
    }

    pub fn filled(dims: [usize; 3], value: f32) -> Result<Self, VolumeError> {
        let n = voxel_count(dims)?;
        Self::new(dims, vec![value; n])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.voxels.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }
}

/// Per-voxel region labels; 0 is background, regions are `1..=region_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct AtlasMap {
    dims: [usize; 3],
    labels: Vec<u32>,
    region_count: u32,
}

impl AtlasMap {
    /// Validates that every region `1..=region_count` is present and no label
    /// exceeds it.
    pub fn new(dims: [usize; 3], labels: Vec<u32>, region_count: u32) -> Result<Self, VolumeError> {
        let expected = voxel_count(dims)?;
        if labels.len() != expected {
            return Err(VolumeError::VoxelCount { expected, actual: labels.len() });
        }
        if region_count == 0 {
            return Err(VolumeError::NoRegions);
        }
        let mut seen = vec![false; region_count as usize + 1];
        for (index, &label) in labels.iter().enumerate() {
            if label > region_count {
                return Err(VolumeError::LabelOutOfRange { index, label, region_count });
            }
            seen[label as usize] = true;
        }
        if let Some(r) = (1..=region_count).find(|&r| !seen[r as usize]) {
            return Err(VolumeError::EmptyRegion(r));
        }
        Ok(Self { dims, labels, region_count })
    }

    /// Infers the region count as the maximum label.
    pub fn from_labels(dims: [usize; 3], labels: Vec<u32>) -> Result<Self, VolumeError> {
        let region_count = labels.iter().copied().max().unwrap_or(0);
        Self::new(dims, labels, region_count)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn region_count(&self) -> usize {
        self.region_count as usize
    }

    /// Voxel count per region, index 0 holding region 1.
    pub fn region_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.region_count()];
        for &l in &self.labels {
            if l > 0 {
                sizes[l as usize - 1] += 1;
            }
        }
        sizes
    }

    pub fn foreground_mask(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l > 0).collect()
    }
}

/// Diagnostic class, encoded 0..=3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClassLabel {
    Nor = 0,
    Mci = 1,
    Mcic = 2,
    Ad = 3,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 4] = [ClassLabel::Nor, ClassLabel::Mci, ClassLabel::Mcic, ClassLabel::Ad];

    pub fn code(self) -> u32 {
        self as u32
    }

    pub fn from_code(code: u32) -> Result<Self, VolumeError> {
        match code {
            0 => Ok(ClassLabel::Nor),
            1 => Ok(ClassLabel::Mci),
            2 => Ok(ClassLabel::Mcic),
            3 => Ok(ClassLabel::Ad),
            other => Err(VolumeError::BadClassLabel(other)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Nor => "NOR",
            ClassLabel::Mci => "MCI",
            ClassLabel::Mcic => "MCIc",
            ClassLabel::Ad => "AD",
        }
    }

    /// Accepts either the numeric code or the (case-insensitive) name.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        if let Ok(code) = s.parse::<u32>() {
            return Self::from_code(code).ok();
        }
        Self::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub class_label: ClassLabel,
    pub volume: Volume,
}

/// Labeled subjects sharing one atlas.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    subjects: Vec<Subject>,
    atlas: AtlasMap,
    seed: u64,
}

impl Cohort {
    pub fn new(subjects: Vec<Subject>, atlas: AtlasMap, seed: u64) -> Result<Self, VolumeError> {
        let mut ids = HashSet::with_capacity(subjects.len());
        for s in &subjects {
            if s.volume.dims() != atlas.dims() {
                return Err(VolumeError::DimMismatch { left: s.volume.dims(), right: atlas.dims() });
            }
            if !ids.insert(s.id.as_str()) {
                return Err(VolumeError::DuplicateSubject(s.id.clone()));
            }
        }
        Ok(Self { subjects, atlas, seed })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn atlas(&self) -> &AtlasMap {
        &self.atlas
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn labels(&self) -> Vec<ClassLabel> {
        self.subjects.iter().map(|s| s.class_label).collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.id.clone()).collect()
    }

    pub fn class_counts(&self) -> BTreeMap<ClassLabel, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.subjects {
            *counts.entry(s.class_label).or_insert(0) += 1;
        }
        counts
    }

    /// Subjects at the given positions, keeping their relative order.
    pub fn select(&self, indices: &[usize]) -> Cohort {
        Cohort {
            subjects: indices.iter().map(|&i| self.subjects[i].clone()).collect(),
            atlas: self.atlas.clone(),
            seed: self.seed,
        }
    }

    /// SHA-256 over ids, labels and voxel bytes, hex encoded.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for &l in self.atlas.labels() {
            h.update(l.to_le_bytes());
        }
        for s in &self.subjects {
            h.update(s.id.as_bytes());
            h.update([0u8, s.class_label.code() as u8]);
            for &v in s.volume.voxels() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Rows are subjects in cohort order, columns are regions `1..=R`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionProfileMatrix {
    pub subject_ids: Vec<String>,
    pub region_ids: Vec<u32>,
    values: Vec<f64>,
}

impl RegionProfileMatrix {
    pub fn from_rows(subject_ids: Vec<String>, region_ids: Vec<u32>, rows: Vec<Vec<f64>>) -> Self {
        let r = region_ids.len();
        assert!(rows.iter().all(|row| row.len() == r), "ragged profile rows");
        assert_eq!(rows.len(), subject_ids.len());
        Self { subject_ids, region_ids, values: rows.into_iter().flatten().collect() }
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn n_regions(&self) -> usize {
        self.region_ids.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let r = self.n_regions();
        &self.values[i * r..(i + 1) * r]
    }

    pub fn get(&self, i: usize, region_col: usize) -> f64 {
        self.values[i * self.n_regions() + region_col]
    }

    pub fn column(&self, region_col: usize) -> Vec<f64> {
        (0..self.n_subjects()).map(|i| self.get(i, region_col)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_subjects()).map(|i| self.row(i).to_vec()).collect()
    }

    /// Sub-matrix of the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self::from_rows(
            indices.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            self.region_ids.clone(),
            indices.iter().map(|&i| self.row(i).to_vec()).collect(),
        )
    }
}

/// Mean intensity per region, background excluded. Entry `r-1` holds region `r`.
pub fn region_means(volume: &Volume, atlas: &AtlasMap) -> Result<Vec<f64>, VolumeError> {
    if volume.dims() != atlas.dims() {
        return Err(VolumeError::DimMismatch { left: volume.dims(), right: atlas.dims() });
    }
    let r = atlas.region_count();
    let mut sums = vec![0.0f64; r];
    let mut counts = vec![0usize; r];
    for (&v, &l) in volume.voxels().iter().zip(atlas.labels()) {
        if l > 0 {
            sums[l as usize - 1] += f64::from(v);
            counts[l as usize - 1] += 1;
        }
    }
    sums.iter()
        .zip(&counts)
        .enumerate()
        .map(|(i, (&s, &c))| {
            if c == 0 {
                Err(VolumeError::EmptyRegion(i as u32 + 1))
            } else {
                Ok(s / c as f64)
            }
        })
        .collect()
}

pub fn build_region_profiles(cohort: &Cohort) -> Result<RegionProfileMatrix, VolumeError> {
    if cohort.is_empty() {
        return Err(VolumeError::EmptyCohort);
    }
    let rows = cohort
        .subjects()
        .iter()
        .map(|s| region_means(&s.volume, cohort.atlas()))
        .collect::<Result<Vec<_>, _>>()?;
    let region_ids = (1..=cohort.atlas().region_count() as u32).collect();
    Ok(RegionProfileMatrix::from_rows(cohort.ids(), region_ids, rows))
}

/// Positions of a balanced subsample: each requested class keeps
/// `min(count)` members chosen uniformly without replacement. Cohort order is
/// preserved.
pub fn balanced_indices(
    labels: &[ClassLabel],
    groups: &BTreeSet<ClassLabel>,
    seed: u64,
) -> Result<Vec<usize>, VolumeError> {
    let mut by_class: BTreeMap<ClassLabel, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        if groups.contains(&l) {
            by_class.entry(l).or_default().push(i);
        }
    }
    for g in groups {
        if !by_class.contains_key(g) {
            return Err(VolumeError::MissingClass(*g));
        }
    }
    let target = by_class.values().map(Vec::len).min().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for members in by_class.values() {
        let mut picked: Vec<usize> = sample(&mut rng, members.len(), target)
            .into_iter()
            .map(|k| members[k])
            .collect();
        picked.sort_unstable();
        keep.extend(picked);
    }
    keep.sort_unstable();
    Ok(keep)
}

pub fn balanced_subset(
    cohort: &Cohort,
    groups: &BTreeSet<ClassLabel>,
    seed: u64,
) -> Result<Cohort, VolumeError> {
    let idx = balanced_indices(&cohort.labels(), groups, seed)?;
    Ok(cohort.select(&idx))
}
