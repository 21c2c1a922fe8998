//! Bootstrap dispersion of embeddings.
//!
//! Each resample draws n rows with replacement, refits the method, and is
//! aligned onto the full-data embedding by a similarity Procrustes fit
//! (rotation/reflection, uniform scale, translation). The full embedding is
//! first centered and scaled to unit RMS radius, so dispersions are relative
//! to the embedding's own spread.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::Rng;

use super::{project, Method, ProjectionError, ProjectionParams, COMPONENTS};
use crate::seed;
use crate::volume::ClassLabel;

pub const MIN_SUBJECTS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSummary {
    pub resamples: usize,
    /// Per-subject standard deviation of each aligned component over the
    /// resamples containing the subject; zero where undefined.
    pub dispersion: Vec<[f64; COMPONENTS]>,
    /// Resamples in which each subject appeared.
    pub appearances: Vec<usize>,
    /// Resamples that could not be fitted (e.g. a single class for PLS).
    pub skipped: usize,
    /// Set when some dispersion is undefined (fewer than two appearances).
    pub degenerate: bool,
}

impl BootstrapSummary {
    pub fn mean_dispersion(&self, subject: usize) -> f64 {
        self.dispersion[subject].iter().sum::<f64>() / COMPONENTS as f64
    }
}

fn to_vec3(r: &[f64; COMPONENTS]) -> Vector3<f64> {
    Vector3::new(r[0], r[1], r[2])
}

/// Centers and scales rows to unit RMS distance from the centroid.
pub fn normalize(rows: &[[f64; COMPONENTS]]) -> Vec<Vector3<f64>> {
    let n = rows.len() as f64;
    let pts: Vec<Vector3<f64>> = rows.iter().map(to_vec3).collect();
    let c = pts.iter().sum::<Vector3<f64>>() / n;
    let rms = (pts.iter().map(|p| (p - c).norm_squared()).sum::<f64>() / n).sqrt();
    pts.iter().map(|p| if rms > 0.0 { (p - c) / rms } else { Vector3::zeros() }).collect()
}

/// Maps `source` onto `target` (paired rows) by the least-squares
/// similarity transform.
pub fn procrustes(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let n = source.len() as f64;
    let cs = source.iter().sum::<Vector3<f64>>() / n;
    let ct = target.iter().sum::<Vector3<f64>>() / n;
    let mut m = Matrix3::zeros();
    let mut ss = 0.0;
    for (s, t) in source.iter().zip(target) {
        let a = s - cs;
        m += a * (t - ct).transpose();
        ss += a.norm_squared();
    }
    if ss == 0.0 {
        return vec![ct; source.len()];
    }
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let r = u * vt;
    let scale = svd.singular_values.sum() / ss;
    source.iter().map(|s| ct + scale * r.transpose() * (s - cs)).collect()
}

pub fn bootstrap_embeddings(
    x: &DMatrix<f64>,
    labels: &[ClassLabel],
    method: Method,
    params: &ProjectionParams,
    resamples: usize,
    seed: u64,
) -> Result<BootstrapSummary, ProjectionError> {
    let n = x.nrows();
    if n < MIN_SUBJECTS {
        return Err(ProjectionError::TooFewSubjects { need: MIN_SUBJECTS, got: n });
    }
    if labels.len() != n {
        return Err(ProjectionError::Shape("labels must align with rows".into()));
    }
    let (full, _) = project(method, x, labels, params, seed)?;
    let reference = normalize(&full);
    let mut samples: Vec<Vec<Vector3<f64>>> = vec![Vec::new(); n];
    let mut skipped = 0;
    for b in 0..resamples {
        let mut rng = seed::rng(seed::derive_str(seed::derive(seed, b as u64), "bootstrap"));
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let xb = x.select_rows(idx.iter());
        let lb: Vec<ClassLabel> = idx.iter().map(|&i| labels[i]).collect();
        let fitted = match project(method, &xb, &lb, params, seed::derive(seed, b as u64)) {
            Ok((rows, _)) => rows,
            Err(ProjectionError::ConstantResponse | ProjectionError::TooFewClasses(_)) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let source: Vec<Vector3<f64>> = fitted.iter().map(to_vec3).collect();
        let target: Vec<Vector3<f64>> = idx.iter().map(|&i| reference[i]).collect();
        let aligned = procrustes(&source, &target);
        let mut acc = vec![(Vector3::zeros(), 0usize); n];
        for (&i, p) in idx.iter().zip(&aligned) {
            acc[i].0 += p;
            acc[i].1 += 1;
        }
        for (i, (sum, count)) in acc.into_iter().enumerate() {
            if count > 0 {
                samples[i].push(sum / count as f64);
            }
        }
    }
    let mut degenerate = false;
    let dispersion = samples
        .iter()
        .map(|s| {
            if s.len() < 2 {
                degenerate = true;
                return [0.0; COMPONENTS];
            }
            let m = s.len() as f64;
            let mean = s.iter().sum::<Vector3<f64>>() / m;
            std::array::from_fn(|c| (s.iter().map(|p| (p[c] - mean[c]).powi(2)).sum::<f64>() / (m - 1.0)).sqrt())
        })
        .collect();
    Ok(BootstrapSummary {
        resamples,
        dispersion,
        appearances: samples.iter().map(Vec::len).collect(),
        skipped,
        degenerate,
    })
}
