//! Dual-test behaviour on constructed pairs and full grids on phantom
//! cohorts, with a PCA of regional profiles standing in for encoder
//! activations.

use std::collections::BTreeMap;

use lrcp_core::lrcp::{
    accuracy_map, analytic_null_quantile, lrcp_cell, lrcp_grid, summary_counts, Category, Comparison,
    ComparisonEmbeddings, LrcpConfig, LrcpError, LrcpGrid,
};
use lrcp_core::phantom::{generate_phantom_cohort, PhantomConfig, PlantedEffect};
use lrcp_core::projection::{embed, Layer, Method, ProjectionParams};
use lrcp_core::volume::{balanced_indices, build_region_profiles};
use lrcp_core::{ClassLabel, Cohort, RegionProfileMatrix};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn balanced(n: usize) -> Vec<bool> {
    (0..n).map(|i| i % 2 == 1).collect()
}

#[test]
fn class_driven_region_is_both() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pos = balanced(60);
    let region: Vec<f64> = pos.iter().map(|&p| if p { 2.0 } else { 0.0 } + normal(&mut rng)).collect();
    let comp: Vec<f64> = region.iter().map(|v| v + 0.5 * normal(&mut rng)).collect();
    let s = lrcp_cell(&comp, &region, &pos, &LrcpConfig::default()).unwrap();
    assert_eq!(s.category, Category::Both);
}

#[test]
fn shared_confounder_is_corr_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pos = balanced(60);
    let hidden: Vec<f64> = (0..60).map(|_| normal(&mut rng)).collect();
    let comp: Vec<f64> = hidden.iter().map(|h| h + 0.3 * normal(&mut rng)).collect();
    let region: Vec<f64> = hidden.iter().map(|h| h + 0.3 * normal(&mut rng)).collect();
    let s = lrcp_cell(&comp, &region, &pos, &LrcpConfig::default()).unwrap();
    assert_eq!(s.category, Category::CorrOnly, "{s:?}");
}

#[test]
fn xor_needs_the_product_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // mirrored pairs (a, b), (a, -b) give exactly zero sample correlation
    let half: Vec<(f64, f64)> = (0..40).map(|_| (normal(&mut rng), normal(&mut rng))).collect();
    let a: Vec<f64> = half.iter().flat_map(|&(x, _)| [x, x]).collect();
    let b: Vec<f64> = half.iter().flat_map(|&(_, y)| [y, -y]).collect();
    let pos: Vec<bool> = a.iter().zip(&b).map(|(x, y)| x * y > 0.0).collect();
    let lin = lrcp_cell(&a, &b, &pos, &LrcpConfig::default()).unwrap();
    assert!(!lin.significant(), "{lin:?}");
    let quad = lrcp_cell(&a, &b, &pos, &LrcpConfig { quadratic: true, ..Default::default() }).unwrap();
    assert!(quad.significant(), "{quad:?}");
    assert!(quad.r.unwrap().abs() < 1e-12);
    assert_eq!(quad.category, Category::ClassOnly);
}

#[test]
fn null_cells_rarely_significant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pos = balanced(60);
    let trials = 2000;
    let hits = (0..trials)
        .filter(|_| {
            let a: Vec<f64> = (0..60).map(|_| normal(&mut rng)).collect();
            let b: Vec<f64> = (0..60).map(|_| normal(&mut rng)).collect();
            lrcp_cell(&a, &b, &pos, &LrcpConfig::default()).unwrap().significant()
        })
        .count();
    assert!((hits as f64) <= 0.05 * trials as f64, "{hits}/{trials}");
}

const REGIONS: usize = 24;

fn cohort(effect: f64, seed: u64) -> Cohort {
    let cfg = PhantomConfig {
        dims: [20, 20, 20],
        region_count: REGIONS,
        class_counts: [(ClassLabel::Nor, 30), (ClassLabel::Mci, 30), (ClassLabel::Ad, 30)].into_iter().collect(),
        effects: (1..=10).map(|region| PlantedEffect { region, class: ClassLabel::Ad, shift: -effect }).collect(),
        subject_sigma: 0.05,
        severity_jitter: 0.5,
        seed,
        ..PhantomConfig::desk()
    };
    generate_phantom_cohort(&cfg).unwrap()
}

fn pca_inputs(profiles: &RegionProfileMatrix, labels: &[ClassLabel], comparisons: &[Comparison]) -> Vec<ComparisonEmbeddings> {
    comparisons
        .iter()
        .map(|cmp| {
            let idx = balanced_indices(labels, &cmp.classes(), 5).unwrap();
            let x = DMatrix::from_fn(idx.len(), profiles.n_regions(), |i, j| profiles.get(idx[i], j));
            let ids: Vec<String> = idx.iter().map(|&i| profiles.subject_ids[i].clone()).collect();
            let labs: Vec<ClassLabel> = idx.iter().map(|&i| labels[i]).collect();
            let e = embed(Method::Pca, Layer::L3, &x, &ids, &labs, &ProjectionParams::default(), 0).unwrap();
            ComparisonEmbeddings { comparison: cmp.clone(), embeddings: BTreeMap::from([((Method::Pca, Layer::L3), e)]) }
        })
        .collect()
}

fn grid_for(cohort: &Cohort, labels: &[ClassLabel]) -> LrcpGrid {
    let profiles = build_region_profiles(cohort).unwrap();
    let comparisons = vec![Comparison::parse("NOR_AD").unwrap(), Comparison::parse("NOR_MCI").unwrap()];
    let inputs = pca_inputs(&profiles, labels, &comparisons);
    lrcp_grid(&inputs, &[Method::Pca], &[Layer::L3], &profiles, labels, &LrcpConfig::default()).unwrap()
}

#[test]
fn shifted_comparison_dominates_and_partitions() {
    for seed in 21..26 {
        let c = cohort(0.3, seed);
        let grid = grid_for(&c, &c.labels());
        assert_eq!(grid.cells.len(), 2 * 3 * REGIONS);
        let summary = summary_counts(&grid);
        assert_eq!(summary.len(), 2 * 3);
        for row in &summary {
            assert_eq!(row.significant + row.non_significant, REGIONS);
            assert_eq!(row.categories.iter().sum::<usize>(), REGIONS);
        }
        let total = |name: &str| summary.iter().filter(|r| r.comparison.to_string() == name).map(|r| r.significant).sum::<usize>();
        assert!(total("NOR_AD") > 2 * total("NOR_MCI"), "seed {seed}: {} vs {}", total("NOR_AD"), total("NOR_MCI"));
        // the leading component carries the class shift
        assert!(summary[0].significant > summary[3].significant);
        for cell in &grid.cells {
            let s = &cell.stats;
            if !s.degenerate {
                let expect = Category::from_tests(s.p.is_some_and(|p| p < 0.05), s.corr_error < 0.5);
                assert_eq!(s.category, expect);
            }
        }
    }
}

#[test]
fn permuted_labels_fall_to_null() {
    let c = cohort(0.3, 22);
    let mut counts = Vec::new();
    for k in 0..20u64 {
        let mut labels = c.labels();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(100 + k));
        let grid = grid_for(&c, &labels);
        counts.extend(summary_counts(&grid).iter().filter(|r| r.comparison.to_string() == "NOR_AD").map(|r| r.significant as u64));
    }
    counts.sort_unstable();
    let median = counts[counts.len() / 2];
    let null95 = analytic_null_quantile(REGIONS, 0.05, 0.95);
    assert!(median <= null95, "median {median} vs null {null95}");
}

fn ad_counts(effect: f64, seed: u64) -> (usize, usize) {
    let c = cohort(effect, seed);
    let grid = grid_for(&c, &c.labels());
    let both = grid.cells.iter().filter(|x| x.comparison.to_string() == "NOR_AD" && x.stats.category == Category::Both).count();
    (both, summary_counts(&grid)[0].significant)
}

/// Known to fail: past a moderate effect the leading component absorbs the
/// whole shift and chance "both" cells on the other components disappear,
/// so the total can drop (seed 23 gives 1, 16, 12, 11).
#[test]
#[ignore = "total both count peaks at moderate effect; see leading_slice_significance_monotone_in_effect"]
fn both_count_monotone_in_effect() {
    for seed in 20..26 {
        let mut last = 0;
        for effect in [0.0, 0.1, 0.2, 0.4] {
            let (both, _) = ad_counts(effect, seed);
            assert!(both >= last, "seed {seed} effect {effect}: {both} < {last}");
            last = both;
        }
    }
}

#[test]
fn leading_slice_significance_monotone_in_effect() {
    for seed in 20..26 {
        let mut last = 0;
        for effect in [0.0, 0.1, 0.2, 0.4] {
            let (_, significant) = ad_counts(effect, seed);
            assert!(significant >= last, "seed {seed} effect {effect}: {significant} < {last}");
            last = significant;
        }
        assert_eq!(last, REGIONS);
    }
}

#[test]
fn accuracy_map_highlights_planted_regions() {
    let c = cohort(0.3, 24);
    let grid = grid_for(&c, &c.labels());
    let cmp = Comparison::parse("NOR_AD").unwrap();
    let slice = grid.slice(&cmp, Method::Pca, Layer::L3, 0);
    let map = accuracy_map(&slice, c.atlas()).unwrap();
    let labels = c.atlas().labels();
    let (argmax, _) = map.voxels().iter().enumerate().fold((0, f32::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
    assert!((1..=10).contains(&labels[argmax]));
    assert!(labels.iter().zip(map.voxels()).all(|(&l, &v)| l != 0 || v == 0.0));
}

#[test]
fn missing_embedding_is_listed() {
    let c = cohort(0.0, 25);
    let profiles = build_region_profiles(&c).unwrap();
    let inputs = pca_inputs(&profiles, &c.labels(), &[Comparison::parse("NOR_AD").unwrap()]);
    let err = lrcp_grid(&inputs, &[Method::Pca, Method::Pls], &[Layer::L3], &profiles, &c.labels(), &LrcpConfig::default()).unwrap_err();
    assert_eq!(err, LrcpError::MissingEmbedding("NOR_AD/pls/L3".into()));
}

