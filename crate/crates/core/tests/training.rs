//! Training behaviour on small cohorts.

use lrcp_core::autoencoder::{train, TrainConfig};
use lrcp_core::phantom::{generate_phantom_cohort, PhantomConfig};
use lrcp_core::{AtlasMap, ClassLabel, Cohort, Subject, Volume};

fn uniform_cohort(n: usize, value: f32) -> Cohort {
    let d = [32, 32, 32];
    let atlas = AtlasMap::new(d, vec![1; 32 * 32 * 32], 1).unwrap();
    let subjects = (0..n)
        .map(|i| Subject {
            id: format!("c{i:03}"),
            class_label: ClassLabel::ALL[i % 4],
            volume: Volume::filled(d, value).unwrap(),
        })
        .collect();
    Cohort::new(subjects, atlas, 0).unwrap()
}

#[test]
fn constant_cohort_is_learned() {
    let cohort = uniform_cohort(120, 0.3);
    let (_, report) = train(&cohort, &TrainConfig { seed: 11, ..Default::default() }).unwrap();
    let losses = &report.epoch_losses;
    assert_eq!(losses.len(), 10);
    assert!(*losses.last().unwrap() < 1e-4, "{losses:?}");
    for w in losses[1..].windows(2) {
        assert!(w[1] <= w[0] + 1e-6, "{losses:?}");
    }
}

#[test]
fn same_seed_same_report() {
    let cfg = PhantomConfig {
        dims: [12, 12, 12],
        region_count: 6,
        class_counts: [(ClassLabel::Nor, 3), (ClassLabel::Ad, 3)].into_iter().collect(),
        seed: 4,
        ..PhantomConfig::desk()
    };
    let cohort = generate_phantom_cohort(&cfg).unwrap();
    let tc = TrainConfig { max_epochs: 3, patience: 2, seed: 9, ..Default::default() };
    let (pa, ra) = train(&cohort, &tc).unwrap();
    let (pb, rb) = train(&cohort, &tc).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(pa, pb);
    let (_, rc) = train(&cohort, &TrainConfig { seed: 10, ..tc }).unwrap();
    assert_ne!(ra.params_hash, rc.params_hash);
}

#[test]
fn empty_cohort_rejected() {
    let atlas = AtlasMap::new([4, 4, 4], vec![1; 64], 1).unwrap();
    let cohort = Cohort::new(Vec::new(), atlas, 0).unwrap();
    assert!(train(&cohort, &TrainConfig::default()).is_err());
}
