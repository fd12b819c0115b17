use std::collections::BTreeSet;

use isrc_core::classify::{residual_matrix, EwvParams, Mode, ProbeSet, Strategy};
use isrc_core::dataset::{
    evaluate, generate_synthetic, make_splits, EvalConfig, ImageSetCollection, SplitProtocol, SyntheticSpec,
};
use isrc_core::gallery::{build_gallery, GalleryConfig};
use isrc_oracle as oracle;
use proptest::prelude::*;

fn spec(sigma: f64, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        classes: 5,
        subspace_dim: 3,
        tau: 100,
        sets_per_class: 10,
        images_per_set: 20,
        noise_sigma: sigma,
        seed,
    }
}

fn columns(data: &ImageSetCollection, idx: &[usize], class: &str) -> Vec<Vec<f64>> {
    idx.iter()
        .map(|&i| &data.sets[i])
        .filter(|s| s.class_id == class)
        .flat_map(|s| s.vectors.iter().map(|v| v.values().to_vec()))
        .collect()
}

/// Accuracy per strategy recomputed with the straight-line oracle.
fn oracle_accuracy(data: &ImageSetCollection, protocol: &SplitProtocol, ewv: EwvParams) -> [f64; 3] {
    let classes = data.class_ids();
    let folds = make_splits(&data.keys(), protocol).unwrap();
    let mut sums = [0.0; 3];
    for f in &folds {
        let gallery: Vec<Vec<Vec<f64>>> = classes.iter().map(|c| columns(data, &f.gallery, c)).collect();
        let mut correct = [0usize; 3];
        for &t in &f.test {
            let set = &data.sets[t];
            let probes: Vec<Vec<f64>> = set.vectors.iter().map(|v| v.values().to_vec()).collect();
            let r = oracle::residual_grid(&gallery, &probes).unwrap();
            let truth = classes.iter().position(|c| *c == set.class_id).unwrap();
            let picks = [
                oracle::majority_vote(&r).class,
                oracle::nearest_neighbour(&r).class,
                oracle::exponential_vote(&r, ewv.beta, ewv.normalize).0.class,
            ];
            for k in 0..3 {
                correct[k] += usize::from(picks[k] == truth);
            }
        }
        for k in 0..3 {
            sums[k] += 100.0 * correct[k] as f64 / f.test.len() as f64;
        }
    }
    sums.map(|s| s / folds.len() as f64)
}

#[test]
fn report_matches_oracle_accuracy() {
    for seed in 0..3 {
        let data = generate_synthetic(&spec(24.0, seed)).unwrap();
        let protocol = SplitProtocol::new(1, 2, seed + 100);
        let report = evaluate(&data, &protocol, &EvalConfig::default()).unwrap();
        let expected = oracle_accuracy(&data, &protocol, EwvParams::default());
        for (k, s) in Strategy::ALL.iter().enumerate() {
            assert_eq!(report.mean_accuracy(*s).unwrap(), expected[k], "seed {seed} {s}");
        }
    }
}

#[test]
fn noise_does_not_help() {
    for seed in 0..5 {
        let protocol = SplitProtocol::new(1, 1, seed);
        let clean = evaluate(&generate_synthetic(&spec(0.0, seed)).unwrap(), &protocol, &EvalConfig::default()).unwrap();
        let noisy = evaluate(&generate_synthetic(&spec(32.0, seed)).unwrap(), &protocol, &EvalConfig::default()).unwrap();
        for s in Strategy::ALL {
            assert!(clean.mean_accuracy(s).unwrap() >= noisy.mean_accuracy(s).unwrap(), "seed {seed} {s}");
        }
    }
}

#[test]
fn single_class_is_always_right() {
    let data = generate_synthetic(&SyntheticSpec { classes: 1, ..spec(50.0, 1) }).unwrap();
    let report = evaluate(&data, &SplitProtocol::new(2, 3, 1), &EvalConfig::default()).unwrap();
    for s in &report.strategies {
        assert_eq!(s.mean, 100.0);
    }
}

#[test]
fn noiseless_within_class_residuals_are_small() {
    let data = generate_synthetic(&spec(0.0, 7)).unwrap();
    let mut pooled = std::collections::BTreeMap::new();
    for s in data.sets.iter().filter(|s| s.set_id == "set00") {
        pooled.insert(s.class_id.clone(), s.vectors.clone());
    }
    let gallery = build_gallery(&pooled, &GalleryConfig::new(data.resolution, 7)).unwrap();
    for set in data.sets.iter().filter(|s| s.set_id == "set01") {
        let probes = ProbeSet::from_vectors(set.set_id.clone(), &set.vectors, None).unwrap();
        let r = residual_matrix(&gallery, &probes, Mode::Fast).unwrap();
        let own = gallery.class_ids().iter().position(|c| *c == set.class_id).unwrap();
        for j in 0..probes.len() {
            let mine = r.get(own, j);
            // Perturbation noise of at most 0.5 per pixel bounds the own-class residual.
            assert!(mine <= 0.5 * 10.0, "own residual {mine}");
            for y in (0..r.class_count()).filter(|&y| y != own) {
                assert!(r.get(y, j) > mine, "class {y} image {j}");
            }
        }
    }
}

#[test]
fn reports_are_reproducible() {
    let data = generate_synthetic(&spec(16.0, 3)).unwrap();
    let protocol = SplitProtocol::new(2, 3, 5);
    let config = EvalConfig { mode: Mode::Online, parallel: true, ..EvalConfig::default() };
    let a = evaluate(&data, &protocol, &config).unwrap();
    let b = evaluate(&data, &protocol, &config).unwrap();
    assert_eq!(a.without_timing(), b.without_timing());
    assert!(a.timing.iter().all(|t| t.build_seconds >= 0.0 && t.classify_seconds >= 0.0));
}

#[test]
fn first_k_cap_limits_probe_and_gallery_images() {
    let data = generate_synthetic(&spec(8.0, 2)).unwrap();
    let mut protocol = SplitProtocol::new(1, 1, 2);
    protocol.set_image_cap = Some(5);
    let report = evaluate(&data, &protocol, &EvalConfig::default()).unwrap();
    assert_eq!(report.test_sets_per_fold, vec![45]);
    // Same outcome as truncating every set up front.
    let mut trimmed = data.clone();
    for s in &mut trimmed.sets {
        s.vectors.truncate(5);
    }
    let direct = evaluate(&trimmed, &SplitProtocol::new(1, 1, 2), &EvalConfig::default()).unwrap();
    assert_eq!(report.sets, direct.sets);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gallery_and_test_never_overlap(classes in 1usize..6, sets in 2usize..7, rule in 1usize..4, seed in any::<u64>(), folds in 1usize..5) {
        prop_assume!(rule < sets);
        let keys: Vec<_> = (0..classes)
            .flat_map(|c| (0..sets).map(move |s| isrc_core::dataset::SetKey { class_id: format!("c{c}"), set_id: format!("s{s}") }))
            .collect();
        let protocol = SplitProtocol::new(rule, folds, seed);
        for f in make_splits(&keys, &protocol).unwrap() {
            let g: BTreeSet<_> = f.gallery.iter().map(|&i| &keys[i]).collect();
            let t: BTreeSet<_> = f.test.iter().map(|&i| &keys[i]).collect();
            prop_assert!(g.is_disjoint(&t));
            prop_assert_eq!(g.len() + t.len(), keys.len());
            prop_assert_eq!(g.len(), classes * rule);
        }
    }
}
