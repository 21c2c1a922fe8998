//! Pearson correlation between embedding components and region means, exact
//! t-distribution p-values, top-N region rankings and cross-comparison
//! overlap.

use std::collections::{BTreeMap, BTreeSet};

use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::projection::{EmbeddingMatrix, Layer, Method, COMPONENTS};
use crate::volume::{ClassLabel, RegionProfileMatrix};

/// Minimum subjects for a correlation.
pub const MIN_N: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("correlation undefined: {0} input is constant")]
    Constant(&'static str),
    #[error("need at least {MIN_N} paired values, got {0}")]
    TooShort(usize),
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("row order mismatch between embedding and region profiles at row {0}")]
    Misaligned(usize),
    #[error("need at least two comparisons, got {0}")]
    TooFewComparisons(usize),
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample Pearson correlation, clamped to [-1, 1].
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::Length(x.len(), y.len()));
    }
    if x.len() < MIN_N {
        return Err(StatsError::TooShort(x.len()));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    // relative guard so a column of one repeated float counts as constant
    let tiny = |ss: f64, m: f64| ss <= 1e-24 * (m * m * x.len() as f64).max(1e-300) || ss == 0.0;
    if tiny(sxx, mx) {
        return Err(StatsError::Constant("first"));
    }
    if tiny(syy, my) {
        return Err(StatsError::Constant("second"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Two-tailed p-value of `r` over `n` pairs against Student's t with n − 2
/// degrees of freedom: `p = I_{1−r²}(ν/2, 1/2)`.
pub fn pearson_pvalue(r: f64, n: usize) -> f64 {
    assert!(n >= MIN_N, "p-value needs n >= 3");
    let r2 = (r * r).min(1.0);
    if r2 >= 1.0 {
        return 0.0;
    }
    let dof = (n - 2) as f64;
    beta_reg(dof / 2.0, 0.5, 1.0 - r2).clamp(0.0, 1.0)
}

/// Smallest |r| with p ≤ alpha at `n` pairs, by bisection.
pub fn critical_r(n: usize, alpha: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if pearson_pvalue(mid, n) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Correlation of one component with one region, pooled or within a class.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationResult {
    pub method: Method,
    pub layer: Layer,
    pub component: usize,
    pub region: u32,
    /// `None` for the pooled correlation.
    pub class: Option<ClassLabel>,
    pub n: usize,
    /// `None` when either input is constant.
    pub r: Option<f64>,
    pub p: Option<f64>,
}

impl CorrelationResult {
    pub fn r_squared(&self) -> Option<f64> {
        self.r.map(|r| r * r)
    }

    pub fn is_significant(&self, alpha: f64) -> bool {
        self.p.is_some_and(|p| p < alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrelationTable {
    pub results: Vec<CorrelationResult>,
    /// Classes skipped for having fewer than three subjects.
    pub skipped_classes: Vec<ClassLabel>,
    pub provenance: BTreeMap<String, String>,
}

fn class_name(c: Option<ClassLabel>) -> &'static str {
    c.map_or("pooled", ClassLabel::name)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}

impl CorrelationTable {
    /// `method,layer,component,region,class,n,r,r2,p`; undefined values are
    /// written as `undefined`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "layer", "component", "region", "class", "n", "r", "r2", "p"]).expect("in-memory");
        for c in &self.results {
            w.write_record([
                c.method.name().to_string(),
                c.layer.name().to_string(),
                format!("D{}", c.component),
                c.region.to_string(),
                class_name(c.class).to_string(),
                c.n.to_string(),
                fmt_opt(c.r),
                fmt_opt(c.r_squared()),
                fmt_opt(c.p),
            ])
            .expect("in-memory");
        }
        String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8")
    }
}

fn correlate(x: &[f64], y: &[f64]) -> (Option<f64>, Option<f64>) {
    match pearson(x, y) {
        Ok(r) => (Some(r), Some(pearson_pvalue(r, x.len()))),
        Err(_) => (None, None),
    }
}

/// Pooled correlations of every (component, region) pair and, with
/// `stratify`, the same within each class having at least three subjects.
pub fn correlate_embedding_regions(
    embedding: &EmbeddingMatrix,
    profiles: &RegionProfileMatrix,
    labels: &[ClassLabel],
    stratify: bool,
) -> Result<CorrelationTable, StatsError> {
    let n = embedding.len();
    if profiles.n_subjects() != n || labels.len() != n {
        return Err(StatsError::Length(n, profiles.n_subjects()));
    }
    if let Some(i) = (0..n).find(|&i| embedding.subject_ids[i] != profiles.subject_ids[i]) {
        return Err(StatsError::Misaligned(i));
    }
    let mut groups: Vec<(Option<ClassLabel>, Vec<usize>)> = vec![(None, (0..n).collect())];
    let mut skipped = Vec::new();
    if stratify {
        let classes: BTreeSet<ClassLabel> = labels.iter().copied().collect();
        for c in classes {
            let idx: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            if idx.len() < MIN_N {
                skipped.push(c);
            } else {
                groups.push((Some(c), idx));
            }
        }
    }
    let mut results = Vec::new();
    for comp in 0..COMPONENTS {
        let x = embedding.component(comp);
        for (col, &region) in profiles.region_ids.iter().enumerate() {
            let y = profiles.column(col);
            for (class, idx) in &groups {
                let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
                let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
                let (r, p) = if idx.len() >= MIN_N { correlate(&xs, &ys) } else { (None, None) };
                results.push(CorrelationResult {
                    method: embedding.method,
                    layer: embedding.layer,
                    component: comp,
                    region,
                    class: *class,
                    n: idx.len(),
                    r,
                    p,
                });
            }
        }
    }
    let mut provenance = embedding.metadata.clone();
    provenance.insert("stratified".into(), stratify.to_string());
    Ok(CorrelationTable { results, skipped_classes: skipped, provenance })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ranking {
    AbsR,
    SignificantOnly,
}

/// Regions ranked by their largest |r| among `results`, descending, ties by
/// region id ascending. Undefined correlations never rank.
pub fn top_regions(results: &[CorrelationResult], n: usize, ranking: Ranking) -> Vec<(u32, f64)> {
    let mut best: BTreeMap<u32, f64> = BTreeMap::new();
    for c in results {
        let Some(r) = c.r else { continue };
        if ranking == Ranking::SignificantOnly && !c.is_significant(0.05) {
            continue;
        }
        let e = best.entry(c.region).or_insert(r);
        if r.abs() > e.abs() {
            *e = r;
        }
    }
    let mut v: Vec<(u32, f64)> = best.into_iter().collect();
    v.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
    v.truncate(n);
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapReport {
    /// (comparison a, comparison b, shared regions ascending), pairs in input
    /// order.
    pub pairs: Vec<(String, String, Vec<u32>)>,
    /// Regions shared by at least three pairs.
    pub recurring: Vec<u32>,
}

impl OverlapReport {
    /// `comparison_a,comparison_b,region`, one row per shared region.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["comparison_a", "comparison_b", "region"]).expect("in-memory");
        for (a, b, regions) in &self.pairs {
            for r in regions {
                w.write_record([a.as_str(), b.as_str(), &r.to_string()]).expect("in-memory");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8")
    }
}

pub fn overlap_report(top: &[(String, Vec<u32>)]) -> Result<OverlapReport, StatsError> {
    if top.len() < 2 {
        return Err(StatsError::TooFewComparisons(top.len()));
    }
    let mut pairs = Vec::new();
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for i in 0..top.len() {
        for j in (i + 1)..top.len() {
            let a: BTreeSet<u32> = top[i].1.iter().copied().collect();
            let b: BTreeSet<u32> = top[j].1.iter().copied().collect();
            let shared: Vec<u32> = a.intersection(&b).copied().collect();
            for &r in &shared {
                *counts.entry(r).or_default() += 1;
            }
            pairs.push((top[i].0.clone(), top[j].0.clone(), shared));
        }
    }
    let recurring = counts.into_iter().filter(|&(_, c)| c >= 3).map(|(r, _)| r).collect();
    Ok(OverlapReport { pairs, recurring })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spec_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 5.0], &[-1.0, -2.0, -5.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(StatsError::Constant("first")));
        assert_eq!(pearson(&[1.0, 2.0], &[1.0, 2.0]), Err(StatsError::TooShort(2)));
    }

    #[test]
    fn pvalue_edges() {
        assert_eq!(pearson_pvalue(0.0, 10), 1.0);
        assert_eq!(pearson_pvalue(1.0, 10), 0.0);
        assert_eq!(pearson_pvalue(-1.0, 10), 0.0);
        let p = pearson_pvalue(0.1133, 300);
        assert!((p - 0.05).abs() < 0.002, "{p}");
    }

    #[test]
    fn ties_rank_by_region_id() {
        let mk = |region, r| CorrelationResult {
            method: Method::Pca,
            layer: Layer::L1,
            component: 0,
            region,
            class: None,
            n: 10,
            r: Some(r),
            p: Some(0.5),
        };
        let results = vec![mk(7, 0.5), mk(3, -0.5), mk(5, 0.9), mk(9, 0.1)];
        let top = top_regions(&results, 10, Ranking::AbsR);
        assert_eq!(top.iter().map(|t| t.0).collect::<Vec<_>>(), vec![5, 3, 7, 9]);
        assert_eq!(top_regions(&results, 2, Ranking::AbsR).len(), 2);
        assert!(top_regions(&results, 2, Ranking::SignificantOnly).is_empty());
    }

    #[test]
    fn overlaps() {
        let same = vec![("a".to_string(), vec![1, 2, 3]), ("b".to_string(), vec![3, 2, 1])];
        assert_eq!(overlap_report(&same).unwrap().pairs[0].2, vec![1, 2, 3]);
        let disjoint = vec![("a".to_string(), vec![1]), ("b".to_string(), vec![2])];
        assert!(overlap_report(&disjoint).unwrap().pairs[0].2.is_empty());
        assert!(overlap_report(&same[..1]).is_err());
        let three = vec![
            ("x".to_string(), vec![4, 1]),
            ("y".to_string(), vec![4, 2]),
            ("z".to_string(), vec![4, 3]),
        ];
        let rep = overlap_report(&three).unwrap();
        assert_eq!(rep.recurring, vec![4]);
        assert_eq!(rep.to_csv(), "comparison_a,comparison_b,region\nx,y,4\nx,z,4\ny,z,4\n");
    }

    proptest! {
        #[test]
        fn symmetric_and_affine(
            x in proptest::collection::vec(-10.0f64..10.0, 5..40),
            seed in 0u64..1000,
            a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
            b in -3.0f64..3.0,
        ) {
            let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v * 0.3 + ((i as u64 * 2654435761 + seed) % 97) as f64 / 10.0).collect();
            let (Ok(r1), Ok(r2)) = (pearson(&x, &y), pearson(&y, &x)) else { return Ok(()) };
            prop_assert!((r1 - r2).abs() < 1e-12);
            let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let r3 = pearson(&ax, &y).unwrap();
            prop_assert!((r3 - a.signum() * r1).abs() < 1e-9);
        }

        #[test]
        fn pvalue_monotone(r1 in 0.0f64..0.99, dr in 0.001f64..0.01, n in 5usize..400) {
            let r2 = (r1 + dr).min(0.999);
            prop_assert!(pearson_pvalue(r2, n) <= pearson_pvalue(r1, n));
            if r1 > 0.0 {
                prop_assert!(pearson_pvalue(r1, n + 5) <= pearson_pvalue(r1, n));
            }
        }
    }
}
