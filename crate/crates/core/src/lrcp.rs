//! Latent–regional correlation profiling.
//!
//! Every (comparison, method, layer, component, region) cell runs two tests
//! on the same pair of per-subject values: a pooled Pearson correlation and a
//! least-squares linear classifier on (component, region) whose
//! resubstitution accuracy is corrected by the PAC-Bayes penalty. The two
//! outcomes give one of four categories.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{Binomial, DiscreteCDF};
use thiserror::Error;

use crate::projection::{EmbeddingMatrix, Layer, Method, COMPONENTS};
use crate::region_stats::{pearson, pearson_pvalue};
use crate::validation::{pac_bayes_corrected_accuracy, BoundConfig, ValidationError};
use crate::volume::{AtlasMap, ClassLabel, RegionProfileMatrix, Volume, VolumeError};

pub const MIN_PER_CLASS: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum LrcpError {
    #[error("each class needs at least {MIN_PER_CLASS} subjects, got {0} and {1}")]
    TooFewSubjects(usize, usize),
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("unknown comparison {0:?}")]
    Comparison(String),
    #[error("missing embeddings for {0}")]
    MissingEmbedding(String),
    #[error("subject {0} has no region profile or label")]
    UnknownSubject(String),
    #[error("grid slice not found: {0}")]
    Slice(String),
    #[error(transparent)]
    Bound(#[from] ValidationError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Control class NOR against one or more other classes, pooled.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Comparison {
    pub groups: Vec<ClassLabel>,
}

impl Comparison {
    pub fn standard() -> Vec<Comparison> {
        ["NOR_AD", "NOR_MCI", "NOR_MCIc", "NOR_MCI_MCIc_AD"]
            .iter()
            .map(|s| Comparison::parse(s).expect("built-in"))
            .collect()
    }

    /// Underscore-joined class names, starting with NOR.
    pub fn parse(s: &str) -> Result<Comparison, LrcpError> {
        let bad = || LrcpError::Comparison(s.to_string());
        let groups: Vec<ClassLabel> = s.split('_').map(|p| ClassLabel::parse(p).ok_or_else(bad)).collect::<Result<_, _>>()?;
        let distinct: BTreeSet<ClassLabel> = groups.iter().copied().collect();
        if groups.len() < 2 || groups[0] != ClassLabel::Nor || distinct.len() != groups.len() {
            return Err(bad());
        }
        Ok(Comparison { groups })
    }

    pub fn classes(&self) -> BTreeSet<ClassLabel> {
        self.groups.iter().copied().collect()
    }

    pub fn includes(&self, c: ClassLabel) -> bool {
        self.groups.contains(&c)
    }

    /// True for the non-control side.
    pub fn is_positive(&self, c: ClassLabel) -> bool {
        c != ClassLabel::Nor
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.groups.iter().map(|g| g.name()).collect();
        f.write_str(&names.join("_"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Both,
    CorrOnly,
    ClassOnly,
    Neither,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Both, Category::CorrOnly, Category::ClassOnly, Category::Neither];

    pub fn from_tests(correlated: bool, classifies: bool) -> Category {
        match (correlated, classifies) {
            (true, true) => Category::Both,
            (true, false) => Category::CorrOnly,
            (false, true) => Category::ClassOnly,
            (false, false) => Category::Neither,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Both => "both",
            Category::CorrOnly => "corr_only",
            Category::ClassOnly => "class_only",
            Category::Neither => "neither",
        }
    }

    pub fn parse(s: &str) -> Option<Category> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrcpConfig {
    pub bound: BoundConfig,
    pub alpha: f64,
    /// Adds the product term to the classifier.
    pub quadratic: bool,
}

impl Default for LrcpConfig {
    fn default() -> Self {
        Self { bound: BoundConfig::default(), alpha: 0.05, quadratic: false }
    }
}

impl LrcpConfig {
    pub fn parameter_count(&self) -> usize {
        if self.quadratic {
            4
        } else {
            3
        }
    }
}

/// Outcome of both tests on one (component, region) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellStats {
    pub n: usize,
    pub r: Option<f64>,
    pub p: Option<f64>,
    pub emp_error: f64,
    pub corr_error: f64,
    pub category: Category,
    /// A constant input; the cell is `Neither` by fiat.
    pub degenerate: bool,
}

impl CellStats {
    /// Bound-corrected error below one half.
    pub fn significant(&self) -> bool {
        !self.degenerate && self.corr_error < 0.5
    }
}

fn standardize(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
    (sd > 1e-12 * m.abs().max(1.0)).then(|| v.iter().map(|x| (x - m) / sd).collect())
}

/// Resubstitution error of the least-squares ±1 classifier; a score of 0
/// counts as positive.
pub fn linear_classifier_error(a: &[f64], b: &[f64], positive: &[bool], quadratic: bool) -> Option<f64> {
    let (za, zb) = (standardize(a)?, standardize(b)?);
    let n = a.len();
    let k = if quadratic { 4 } else { 3 };
    let x = DMatrix::from_fn(n, k, |i, j| match j {
        0 => 1.0,
        1 => za[i],
        2 => zb[i],
        _ => za[i] * zb[i],
    });
    let t = DVector::from_fn(n, |i, _| if positive[i] { 1.0 } else { -1.0 });
    // minimum-norm solution, so collinear features stay usable
    let w = x.clone().svd(true, true).solve(&t, 1e-10).ok()?;
    let scores = &x * w;
    let wrong = (0..n).filter(|&i| (scores[i] >= 0.0) != positive[i]).count();
    Some(wrong as f64 / n as f64)
}

pub fn lrcp_cell(component: &[f64], region: &[f64], positive: &[bool], config: &LrcpConfig) -> Result<CellStats, LrcpError> {
    let n = component.len();
    if region.len() != n || positive.len() != n {
        return Err(LrcpError::Length(n, region.len().min(positive.len())));
    }
    let pos = positive.iter().filter(|&&p| p).count();
    if pos < MIN_PER_CLASS || n - pos < MIN_PER_CLASS {
        return Err(LrcpError::TooFewSubjects(n - pos, pos));
    }
    config.bound.validate()?;
    let r = pearson(component, region).ok();
    let p = r.map(|r| pearson_pvalue(r, n));
    let emp = linear_classifier_error(component, region, positive, config.quadratic);
    let degenerate = r.is_none() || emp.is_none();
    let emp_error = emp.unwrap_or_else(|| pos.min(n - pos) as f64 / n as f64);
    let bound = pac_bayes_corrected_accuracy(1.0 - emp_error, config.parameter_count(), config.bound.dropout, n, config.bound.delta)?;
    let correlated = p.is_some_and(|p| p < config.alpha);
    let classifies = !degenerate && bound.corrected < 0.5;
    Ok(CellStats {
        n,
        r,
        p,
        emp_error,
        corr_error: bound.corrected,
        category: if degenerate { Category::Neither } else { Category::from_tests(correlated, classifies) },
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrcpCell {
    pub comparison: Comparison,
    pub method: Method,
    pub layer: Layer,
    pub component: usize,
    pub region: u32,
    pub stats: CellStats,
}

/// Embeddings of one comparison's (balanced) cohort, keyed by method and
/// layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonEmbeddings {
    pub comparison: Comparison,
    pub embeddings: BTreeMap<(Method, Layer), EmbeddingMatrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrcpGrid {
    /// Ordered by comparison, method, layer, component, region.
    pub cells: Vec<LrcpCell>,
    pub region_ids: Vec<u32>,
    pub provenance: BTreeMap<String, String>,
}

/// Full grid over `inputs × methods × layers × components × regions`.
/// `profiles` and `labels` cover the whole cohort; each embedding selects its
/// subjects by id.
pub fn lrcp_grid(
    inputs: &[ComparisonEmbeddings],
    methods: &[Method],
    layers: &[Layer],
    profiles: &RegionProfileMatrix,
    labels: &[ClassLabel],
    config: &LrcpConfig,
) -> Result<LrcpGrid, LrcpError> {
    if labels.len() != profiles.n_subjects() {
        return Err(LrcpError::Length(labels.len(), profiles.n_subjects()));
    }
    let mut missing = Vec::new();
    for input in inputs {
        for &m in methods {
            for &l in layers {
                if !input.embeddings.contains_key(&(m, l)) {
                    missing.push(format!("{}/{}/{}", input.comparison, m.name(), l.name()));
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(LrcpError::MissingEmbedding(missing.join(", ")));
    }
    let row_of: BTreeMap<&str, usize> = profiles.subject_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut cells = Vec::new();
    for input in inputs {
        for &m in methods {
            for &l in layers {
                let e = &input.embeddings[&(m, l)];
                let rows: Vec<usize> = e
                    .subject_ids
                    .iter()
                    .map(|id| row_of.get(id.as_str()).copied().ok_or_else(|| LrcpError::UnknownSubject(id.clone())))
                    .collect::<Result<_, _>>()?;
                if let Some(&i) = rows.iter().find(|&&i| !input.comparison.includes(labels[i])) {
                    return Err(LrcpError::UnknownSubject(format!(
                        "{} (class {} not in {})",
                        profiles.subject_ids[i], labels[i], input.comparison
                    )));
                }
                let positive: Vec<bool> = rows.iter().map(|&i| input.comparison.is_positive(labels[i])).collect();
                for c in 0..COMPONENTS {
                    let comp = e.component(c);
                    for (col, &region) in profiles.region_ids.iter().enumerate() {
                        let reg: Vec<f64> = rows.iter().map(|&i| profiles.get(i, col)).collect();
                        let stats = lrcp_cell(&comp, &reg, &positive, config)?;
                        cells.push(LrcpCell { comparison: input.comparison.clone(), method: m, layer: l, component: c, region, stats });
                    }
                }
            }
        }
    }
    let mut provenance = BTreeMap::new();
    provenance.insert("delta".into(), config.bound.delta.to_string());
    provenance.insert("eta".into(), config.bound.dropout.to_string());
    provenance.insert("alpha".into(), config.alpha.to_string());
    provenance.insert("parameter_count".into(), config.parameter_count().to_string());
    Ok(LrcpGrid { cells, region_ids: profiles.region_ids.clone(), provenance })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}

/// Significant / non-significant counts for one
/// (comparison, method, layer, component) slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryRow {
    pub comparison: Comparison,
    pub method: Method,
    pub layer: Layer,
    pub component: usize,
    pub significant: usize,
    pub non_significant: usize,
    /// Indexed like [`Category::ALL`].
    pub categories: [usize; 4],
}

impl LrcpGrid {
    /// `comparison,method,layer,component,region,r,p,emp_error,corr_error,category`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["comparison", "method", "layer", "component", "region", "r", "p", "emp_error", "corr_error", "category"])
            .expect("in-memory");
        for c in &self.cells {
            w.write_record([
                c.comparison.to_string(),
                c.method.name().to_string(),
                c.layer.name().to_string(),
                format!("D{}", c.component),
                c.region.to_string(),
                fmt_opt(c.stats.r),
                fmt_opt(c.stats.p),
                c.stats.emp_error.to_string(),
                c.stats.corr_error.to_string(),
                c.stats.category.name().to_string(),
            ])
            .expect("in-memory");
        }
        String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8")
    }

    pub fn slice(&self, comparison: &Comparison, method: Method, layer: Layer, component: usize) -> Vec<&LrcpCell> {
        self.cells
            .iter()
            .filter(|c| &c.comparison == comparison && c.method == method && c.layer == layer && c.component == component)
            .collect()
    }
}

/// Counts per slice, in grid order.
pub fn summary_counts(grid: &LrcpGrid) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = Vec::new();
    for c in &grid.cells {
        let same = rows.last().is_some_and(|r| {
            r.comparison == c.comparison && r.method == c.method && r.layer == c.layer && r.component == c.component
        });
        if !same {
            rows.push(SummaryRow {
                comparison: c.comparison.clone(),
                method: c.method,
                layer: c.layer,
                component: c.component,
                significant: 0,
                non_significant: 0,
                categories: [0; 4],
            });
        }
        let row = rows.last_mut().expect("pushed above");
        if c.stats.significant() {
            row.significant += 1;
        } else {
            row.non_significant += 1;
        }
        let k = Category::ALL.iter().position(|&k| k == c.stats.category).expect("every category listed");
        row.categories[k] += 1;
    }
    rows
}

/// `comparison,method,layer,component,significant,non_significant,both,corr_only,class_only,neither`.
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["comparison", "method", "layer", "component", "significant", "non_significant"];
    header.extend(Category::ALL.iter().map(|c| c.name()));
    w.write_record(&header).expect("in-memory");
    for r in rows {
        let mut rec = vec![
            r.comparison.to_string(),
            r.method.name().to_string(),
            r.layer.name().to_string(),
            format!("D{}", r.component),
            r.significant.to_string(),
            r.non_significant.to_string(),
        ];
        rec.extend(r.categories.iter().map(|c| c.to_string()));
        w.write_record(&rec).expect("in-memory");
    }
    String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8")
}

/// Voxel value `1 − corrected error` of its region's cell, clamped to [0, 1];
/// background 0.
pub fn accuracy_map(cells: &[&LrcpCell], atlas: &AtlasMap) -> Result<Volume, LrcpError> {
    let mut acc = vec![None; atlas.region_count()];
    for c in cells {
        let slot = acc.get_mut(c.region as usize - 1).ok_or_else(|| LrcpError::Slice(format!("region {} outside atlas", c.region)))?;
        *slot = Some((1.0 - c.stats.corr_error).clamp(0.0, 1.0));
    }
    if let Some(r) = acc.iter().position(Option::is_none) {
        return Err(LrcpError::Slice(format!("no cell for region {}", r + 1)));
    }
    let values: Vec<f64> = atlas.labels().iter().map(|&l| if l == 0 { 0.0 } else { acc[l as usize - 1].expect("checked") }).collect();
    Ok(Volume::from_f64_clamped(atlas.dims(), &values)?)
}

/// `q`-quantile of the number of false significant cells among `regions`
/// independent null cells, each significant with probability at most `delta`.
pub fn analytic_null_quantile(regions: usize, delta: f64, q: f64) -> u64 {
    let b = Binomial::new(delta, regions as u64).expect("valid binomial");
    b.inverse_cdf(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comparison_names_round_trip() {
        for c in Comparison::standard() {
            assert_eq!(Comparison::parse(&c.to_string()).unwrap(), c);
        }
        assert!(Comparison::parse("AD_NOR").is_err());
        assert!(Comparison::parse("NOR").is_err());
        assert!(Comparison::parse("NOR_NOR").is_err());
        assert!(Comparison::parse("NOR_XYZ").is_err());
    }

    #[test]
    fn categories_follow_the_rule() {
        assert_eq!(Category::from_tests(true, true), Category::Both);
        assert_eq!(Category::from_tests(true, false), Category::CorrOnly);
        assert_eq!(Category::from_tests(false, true), Category::ClassOnly);
        assert_eq!(Category::from_tests(false, false), Category::Neither);
        for c in Category::ALL {
            assert_eq!(Category::parse(c.name()), Some(c));
        }
    }

    #[test]
    fn separable_pair_is_both() {
        let n = 40;
        let positive: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let region: Vec<f64> = (0..n).map(|i| if positive[i] { 1.0 } else { 0.0 } + 0.01 * i as f64).collect();
        let comp: Vec<f64> = region.iter().map(|v| 2.0 * v + 0.3).collect();
        let s = lrcp_cell(&comp, &region, &positive, &LrcpConfig::default()).unwrap();
        assert_eq!(s.emp_error, 0.0);
        assert_eq!(s.category, Category::Both);
    }

    #[test]
    fn constant_region_is_degenerate() {
        let positive: Vec<bool> = (0..20).map(|i| i < 10).collect();
        let comp: Vec<f64> = (0..20).map(f64::from).collect();
        let s = lrcp_cell(&comp, &[0.4; 20], &positive, &LrcpConfig::default()).unwrap();
        assert!(s.degenerate && !s.significant());
        assert_eq!(s.category, Category::Neither);
    }

    #[test]
    fn small_class_rejected() {
        let positive: Vec<bool> = (0..12).map(|i| i < 4).collect();
        let v: Vec<f64> = (0..12).map(f64::from).collect();
        assert!(matches!(lrcp_cell(&v, &v, &positive, &LrcpConfig::default()), Err(LrcpError::TooFewSubjects(8, 4))));
    }

    #[test]
    fn null_quantile() {
        // Binomial(116, 0.05) has mean 5.8
        let q = analytic_null_quantile(116, 0.05, 0.95);
        assert!((9..=11).contains(&q), "{q}");
        assert_eq!(analytic_null_quantile(32, 1e-9, 0.95), 0);
    }
}
