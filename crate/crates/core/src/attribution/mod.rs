//! Per-class random-forest regression of reconstruction error on regional
//! profiles, explained with exact interventional Shapley values.

pub mod forest;
pub mod shap;

use std::collections::BTreeMap;

use thiserror::Error;

pub use forest::{rf_fit, ForestConfig, ForestModel};
pub use shap::{tree_shap, ShapExplanation};

use crate::volume::{AtlasMap, ClassLabel, RegionProfileMatrix, Volume, VolumeError};

/// Added to the range in the min-max normalization of region importance.
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum AttributionError {
    #[error("need at least {need} subjects, got {got}")]
    TooFewSubjects { need: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite input")]
    NonFinite,
    #[error("invalid forest configuration: {0}")]
    Config(String),
    #[error("background set is empty")]
    EmptyBackground,
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionImportance {
    pub region_ids: Vec<u32>,
    /// Mean |φ_r| over subjects.
    pub s: Vec<f64>,
    /// `(s_r − min s) / (max s − min s + ε)`, in [0, 1).
    pub s_tilde: Vec<f64>,
    /// All `s_r` equal, so every `s̃_r` is 0.
    pub degenerate: bool,
}

impl RegionImportance {
    /// Region with the largest `s̃`; ties go to the lower id.
    pub fn top_region(&self) -> u32 {
        let mut best = 0;
        for i in 1..self.s_tilde.len() {
            if self.s_tilde[i] > self.s_tilde[best] {
                best = i;
            }
        }
        self.region_ids[best]
    }
}

pub fn shap_region_importance(region_ids: &[u32], phis: &[Vec<f64>]) -> Result<RegionImportance, AttributionError> {
    if phis.is_empty() {
        return Err(AttributionError::TooFewSubjects { need: 1, got: 0 });
    }
    let r = region_ids.len();
    if phis.iter().any(|p| p.len() != r) {
        return Err(AttributionError::Shape(format!("attribution rows must have {r} regions")));
    }
    let n = phis.len() as f64;
    let s: Vec<f64> = (0..r).map(|j| phis.iter().map(|p| p[j].abs()).sum::<f64>() / n).collect();
    let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s_tilde = s.iter().map(|v| (v - lo) / (hi - lo + EPSILON)).collect();
    Ok(RegionImportance { region_ids: region_ids.to_vec(), s, s_tilde, degenerate: hi == lo })
}

/// Paints `s̃_r` onto the voxels of region `r`, optionally multiplied by a
/// mask volume.
pub fn build_shap_volume(s_tilde: &[f64], atlas: &AtlasMap, mask: Option<&Volume>) -> Result<Volume, AttributionError> {
    if s_tilde.len() != atlas.region_count() {
        return Err(AttributionError::Length(s_tilde.len(), atlas.region_count()));
    }
    if let Some(m) = mask {
        if m.dims() != atlas.dims() {
            return Err(AttributionError::Shape(format!("mask dims {:?} vs atlas {:?}", m.dims(), atlas.dims())));
        }
    }
    let values: Vec<f64> = atlas
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let v = if l == 0 { 0.0 } else { s_tilde[l as usize - 1] };
            v * mask.map_or(1.0, |m| f64::from(m.voxels()[i]))
        })
        .collect();
    Ok(Volume::from_f64_clamped(atlas.dims(), &values)?)
}

/// Forest, per-subject explanations and importance for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassAttribution {
    pub class: ClassLabel,
    pub subject_ids: Vec<String>,
    pub model: ForestModel,
    pub explanations: Vec<ShapExplanation>,
    pub importance: RegionImportance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionReport {
    pub classes: Vec<ClassAttribution>,
    /// Classes with fewer than five subjects.
    pub skipped: Vec<ClassLabel>,
}

/// One forest per class, fitted on that class's profiles with the class
/// itself as the background set.
pub fn attribute_by_class(
    profiles: &RegionProfileMatrix,
    labels: &[ClassLabel],
    targets: &[f64],
    config: &ForestConfig,
) -> Result<AttributionReport, AttributionError> {
    let n = profiles.n_subjects();
    if labels.len() != n || targets.len() != n {
        return Err(AttributionError::Length(n, labels.len().min(targets.len())));
    }
    let mut groups: BTreeMap<ClassLabel, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let mut classes = Vec::new();
    let mut skipped = Vec::new();
    for (class, idx) in groups {
        if idx.len() < forest::MIN_SUBJECTS {
            skipped.push(class);
            continue;
        }
        let x: Vec<Vec<f64>> = idx.iter().map(|&i| profiles.row(i).to_vec()).collect();
        let y: Vec<f64> = idx.iter().map(|&i| targets[i]).collect();
        let cfg = ForestConfig { seed: crate::seed::derive(config.seed, u64::from(class.code())), ..*config };
        let model = rf_fit(&x, &y, &cfg)?;
        let explanations = x.iter().map(|row| tree_shap(&model, row, &x)).collect::<Result<Vec<_>, _>>()?;
        let phis: Vec<Vec<f64>> = explanations.iter().map(|e| e.phi.clone()).collect();
        let importance = shap_region_importance(&profiles.region_ids, &phis)?;
        classes.push(ClassAttribution {
            class,
            subject_ids: idx.iter().map(|&i| profiles.subject_ids[i].clone()).collect(),
            model,
            explanations,
            importance,
        });
    }
    Ok(AttributionReport { classes, skipped })
}

impl AttributionReport {
    /// `class,subject_id,region,phi`.
    pub fn shap_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["class", "subject_id", "region", "phi"]).expect("in-memory");
        for c in &self.classes {
            for (id, e) in c.subject_ids.iter().zip(&c.explanations) {
                for (r, phi) in c.importance.region_ids.iter().zip(&e.phi) {
                    w.write_record([c.class.name(), id, &r.to_string(), &phi.to_string()]).expect("in-memory");
                }
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8")
    }

    /// `class,region,s_r,s_tilde`.
    pub fn importance_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["class", "region", "s_r", "s_tilde"]).expect("in-memory");
        for c in &self.classes {
            let imp = &c.importance;
            for ((r, s), t) in imp.region_ids.iter().zip(&imp.s).zip(&imp.s_tilde) {
                w.write_record([c.class.name(), &r.to_string(), &s.to_string(), &t.to_string()]).expect("in-memory");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8")
    }

    /// Largest |base + Σφ − prediction| over every explained subject.
    pub fn worst_local_accuracy_gap(&self) -> f64 {
        self.classes
            .iter()
            .flat_map(|c| c.explanations.iter())
            .map(|e| e.local_accuracy_gap().abs())
            .fold(0.0, f64::max)
    }
}
